import io

import numpy as np
import pytest
from scipy import stats

from gldufresne import flows
from gldufresne.errors import HorizonTooShort, OrderViolation
from gldufresne.flows import FlowParams
from gldufresne.laws import WishartSpec, sample_inv_wishart


def test_params_validation():
    for kw in ({"dt": 0.0}, {"T": 1e-5}, {"drift_sign": 0}, {"scheme": "rk4"}, {"beta": 3},
               {"structure": "banded"}):
        with pytest.raises(ValueError):
            FlowParams(2, 1.0, **kw)
    p = FlowParams(2, 1.0, T=1.0, dt=0.3)
    assert np.isclose(p.h * p.n_steps, 1.0)


def test_scalar_flow_is_exact_geometric_bm():
    p = FlowParams(1, 0.7, T=2.0, dt=0.01)
    M, _ = flows.simulate(p, 1, 4000, record_times=[2.0], accumulate=False)
    x = np.log(M.values[:, -1, 0, 0])
    assert stats.kstest(x, stats.norm(0.7 * 2.0, np.sqrt(2.0)).cdf).pvalue > 0.01


@pytest.mark.parametrize("beta", [1, 2])
def test_log_det_is_brownian_with_drift(beta):
    # d log|det M| = Re tr dB + r mu dt exactly under the exponential scheme
    r, mu, T = 3, 0.4, 1.5
    p = FlowParams(r, mu, beta=beta, T=T, dt=0.01)
    M, _ = flows.simulate(p, 2, 3000, record_times=[T], accumulate=False)
    ld = np.linalg.slogdet(M.values[:, -1])[1]
    var = r * T if beta == 1 else r * T / 2
    assert stats.kstest(ld, stats.norm(r * mu * T, np.sqrt(var)).cdf).pvalue > 0.01


def test_mean_of_M():
    # E M_t = exp((1/2 + mu) t) I for real isotropic noise
    p = FlowParams(2, -0.3, T=1.0, dt=0.005)
    M, _ = flows.simulate(p, 3, 20000, record_times=[1.0], accumulate=False)
    mean = M.values[:, -1].mean(axis=0)
    se = M.values[:, -1].std(axis=0) / np.sqrt(20000)
    assert np.all(np.abs(mean - np.exp(0.2) * np.eye(2)) < 4 * se)


def test_simulation_is_batch_and_thread_invariant():
    p = FlowParams(2, 1.0, T=0.2, dt=0.01)
    M1, A1 = flows.simulate(p, 5, 9, record_every=5)
    M2, A2 = flows.simulate(p, 5, 9, record_every=5, threads=3)
    assert np.array_equal(M1.values, M2.values) and np.array_equal(A1.values, A2.values)
    M3, _ = flows.simulate(p, (5, 4, 0), 5, record_every=5)
    assert np.array_equal(M1.values[4:], M3.values)


def test_A_infinity_scalar_is_inverse_gamma():
    A = flows.sample_A_infinity(FlowParams(1, 2.0), rng=4, n_paths=3000)
    assert stats.kstest(A[:, 0, 0], stats.invgamma(2.0, scale=0.5).cdf).pvalue > 0.01


def test_horizon_rules():
    assert np.isclose(flows.horizon_for(2, 3.0, 1e-4), np.log(1e4) / 3)
    assert np.isclose(flows.tail_rate(2, 1.2), 2 * 1.2 - 1)
    with pytest.raises(HorizonTooShort):
        flows.check_horizon(2, 3.0, 1.0, 1e-4)
    with pytest.raises(ValueError):
        flows.horizon_for(3, 0.5)


def test_two_sided_increments_are_fresh_flows():
    # M_s^{-1} M_t for s < 0 < t is an M-path of length t - s
    p = FlowParams(2, 0.5, T=0.5, dt=0.01)
    M = flows.extend_two_sided(p, 0.5, 6, 3000, record_every=50)
    assert np.isclose(M.times[0], -0.5) and np.isclose(M.times[-1], 0.5)
    X = np.linalg.solve(M.values[:, 0], M.values[:, -1])
    ld = np.linalg.slogdet(X)[1]
    assert stats.kstest(ld, stats.norm(2 * 0.5 * 1.0, np.sqrt(2.0)).cdf).pvalue > 0.01
    N = flows.time_reverse(M)
    assert np.allclose(N.times, -M.times[::-1])
    assert np.array_equal(N.values[:, 0], M.values[:, -1])


def test_X_sde_converges_to_conjugated_path_at_order_half():
    # Euler for X against M^{-1} A M^{-T} built from the same increments;
    # non-commuting noise limits the strong order to 1/2
    errs = []
    for dt in (4e-3, 1e-3, 2.5e-4):
        p = FlowParams(2, 1.0, T=1.0, dt=dt)
        M, X = flows.evolve_X(p, 7, 200, record_times=[1.0])
        M2, A2 = flows.simulate(p, 7, 200, record_times=[1.0])
        assert np.allclose(M.values, M2.values)
        Xc = flows.conjugated_X(M2, A2).values[:, -1]
        rel = np.linalg.norm(X.values[:, -1] - Xc, axis=(1, 2)) / np.linalg.norm(Xc, axis=(1, 2))
        errs.append(np.sqrt(np.mean(rel ** 2)))
    order = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(4)
    assert np.all((order > 0.35) & (order < 0.8))


def test_Z_and_inverse_difference():
    p = FlowParams(2, 2.0, drift_sign=-1, T=1.0, dt=1e-3)
    M, A = flows.simulate(p, 8, 50, record_times=[0.5, 1.0])
    Z = flows.construct_Z(M, A)
    assert np.allclose(M.values @ Z.values, A.values)
    A_inf = flows.sample_A_infinity(p, rng=8, n_paths=50)
    D = flows.inverse_difference(A.at(0.5), A_inf)
    assert np.allclose(D, np.linalg.inv(A.at(0.5)) - np.linalg.inv(A_inf), rtol=1e-6, atol=1e-8)
    assert np.all(np.linalg.eigvalsh(D) > 0)
    with pytest.raises(OrderViolation):
        flows.inverse_difference(A_inf, A.at(0.5))


def test_enlargement_detects_short_horizon():
    p = FlowParams(2, 2.0, drift_sign=-1, T=1.0, dt=1e-2)
    M, A = flows.simulate(p, 9, 5, record_times=[0.5, 1.0])
    with pytest.raises(OrderViolation):
        flows.enlargement_N(M, A, A.at(0.5))


def test_Q_keeps_inverse_wishart_law():
    r, mu = 2, 3.0
    Q0 = sample_inv_wishart(WishartSpec(r, 2 * mu), 0, 3000)
    Q = flows.evolve_Q(Q0, FlowParams(r, mu, T=0.5, dt=1e-3), 1, record_times=[0.5])
    fresh = sample_inv_wishart(WishartSpec(r, 2 * mu), 1, 3000)
    tr = np.trace(Q.values[:, -1], axis1=1, axis2=2)
    assert stats.ks_2samp(tr, np.trace(fresh, axis1=1, axis2=2)).pvalue > 0.01


def test_oioo_scalar_output_is_geometric_bm():
    p = FlowParams(1, 1.5, T=1.0, dt=1e-3)
    lhs, ref = flows.burke_oioo_path(p, 3, 2000, record_times=[1.0])
    x = np.log(np.abs(lhs.at(1.0)[:, 0, 0]))
    assert stats.kstest(x, stats.norm(1.5, 1.0).cdf).pvalue > 0.01


def test_bhat_scalar_increments():
    p = FlowParams(1, 1.5, T=1.0, dt=1e-3)
    B = flows.bhat_path(p, 4, 2000, record_times=[1.0])
    assert stats.kstest(B.at(1.0)[:, 0, 0], stats.norm(0, 1).cdf).pvalue > 0.01


@pytest.mark.parametrize("beta", [1, 2])
def test_snapshot_roundtrip(beta):
    p = FlowParams(2, 1.0, beta=beta, T=0.05, dt=0.01)
    M, _ = flows.simulate(p, 0, 2, record_every=1, accumulate=False)
    buf = io.BytesIO()
    flows.write_snapshot(M, buf, index=1)
    buf.seek(0)
    back = flows.read_snapshot(buf)
    assert np.array_equal(back.values[0], M.values[1]) and np.array_equal(back.times, M.times)
    txt = io.StringIO()
    flows.path_to_csv(M, txt)
    lines = txt.getvalue().splitlines()
    assert len(lines) == len(M.times) + 1
    assert lines[0].startswith("t,re_00" if beta == 2 else "t,m_00")
