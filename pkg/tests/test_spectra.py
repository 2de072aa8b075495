import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gldufresne import flows, spectra
from gldufresne.errors import HorizonTooShort
from gldufresne.flows import FlowParams
from gldufresne.laws import WishartSpec, sample_inv_wishart
from gldufresne.spectra import EigParams


def test_eig_params_validation():
    with pytest.raises(ValueError):
        EigParams(2, 1.0, beta=3)
    with pytest.raises(ValueError):
        EigParams(2, 1.0, dt=0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=2, max_size=4, unique=True), st.floats(0.6, 4))
def test_common_drift_matches_real_wishart_drift(p, mu):
    p = np.sort(np.asarray(p))
    if np.min(np.diff(p)) < 1e-3:
        return
    assert np.allclose(spectra.common_eig_drift(p, mu, 1), spectra.wishart_eig_drift_real(p, mu))


def test_pair_coth_is_the_pair_interaction():
    x = np.array([[0.5, 1.3, 4.0]])
    c, near = spectra._pair_coth(np.log(x))
    direct = [sum((x[0, i] + x[0, j]) / (x[0, i] - x[0, j]) for j in range(3) if j != i) for i in range(3)]
    assert np.allclose(c[0], direct)
    assert not near.any()


def test_scalar_X_eigs_is_inverse_gamma_in_the_limit():
    # r = 1: X_t has the law of A_t for the -mu flow, so for large t it is near 1/(2 Gamma(mu))
    sp = spectra.evolve_X_eigs(EigParams(1, 1.5, T=6.0, dt=2e-3), 1, 2000)
    x = sp.values[:, -1, 0]
    assert stats.kstest(x, stats.invgamma(1.5, scale=0.5).cdf).pvalue > 0.01


@pytest.mark.parametrize("beta", [1, 2])
def test_P_eigs_against_full_Q(beta):
    r, mu, n = 2, 3.0, 1500
    Q0 = sample_inv_wishart(WishartSpec(r, 2 * mu, beta=beta), np.random.default_rng(beta), n)
    Q = flows.evolve_Q(Q0, FlowParams(r, mu, beta=beta, T=0.5, dt=1e-3), (3, 0, beta), n, record_times=[0.5])
    eq = np.sort(np.linalg.eigvalsh(Q.values[:, -1]), axis=1)
    sp = spectra.evolve_P_eigs(EigParams(r, mu, beta, 0.5, 1e-3, init=1.0 / np.linalg.eigvalsh(Q0)),
                               (4, 0, beta), n)
    ep = np.sort(1.0 / sp.values[:, -1], axis=1)
    for j in range(r):
        assert stats.ks_2samp(eq[:, j], ep[:, j]).pvalue > 0.001


def test_P_eigs_degenerate_start_uses_warm_start():
    sp = spectra.evolve_P_eigs(EigParams(2, 2.0, T=0.2, dt=1e-3, init=np.ones(2)), 0, 50)
    assert np.isclose(sp.times[0], 0.05)
    assert np.all(np.diff(sp.values[:, -1], axis=1) > 0)


def test_Z_singvals_scalar_against_full():
    r, mu, n = 1, 1.0, 2000
    M, A = flows.simulate(FlowParams(r, mu, T=1.0), 1, n, record_times=[1.0])
    z = np.abs(np.linalg.solve(M.values[:, -1], A.values[:, -1])[:, 0, 0])
    sp = spectra.evolve_Z_singvals(EigParams(r, mu, T=0.95), rng=2, n_paths=n, warm_t0=0.05)
    assert stats.ks_2samp(z, sp.values[:, -1, 0]).pvalue > 0.01


def test_Z_scalar_drift_source_is_bessel_ratio():
    src = spectra.kappa_source_for(1, 1.5)
    a = np.array([[0.3], [2.0]])
    from scipy import special
    assert np.allclose(src(a)[:, 0], np.sqrt(a[:, 0]) * special.kv(2.5, np.sqrt(a[:, 0])) / special.kv(1.5, np.sqrt(a[:, 0])))


def test_lyapunov_scalar_and_sum_rule():
    p = FlowParams(2, 0.8, T=12.0, dt=2e-3)
    M, _ = flows.simulate(p, 1, 40, record_every=1, accumulate=False, store_increments=True)
    est = spectra.lyapunov_exponents(M, per_path=True)
    # the exponents sum to the drift of log|det M|, r mu, with per-path noise sqrt(r / T)
    s = est.sum(axis=1)
    assert abs(s.mean() - 2 * 0.8) < 4 * np.sqrt(2 / 12.0) / np.sqrt(40)
    assert abs(est.mean(axis=0)[1] - est.mean(axis=0)[0] - 1.0) < 0.15
    with pytest.raises(HorizonTooShort):
        spectra.lyapunov_exponents(M, burn_in=5.0)


def test_reflected_bm_oracle_matches_exact_cdf():
    x = spectra.reflected_drift_bm(1.0, 1.0, 20000, 0, dt=1e-4)
    d = stats.kstest(x, lambda v: spectra.reflected_drift_bm_cdf(v, 1.0, 1.0)).statistic
    assert d < 0.02


def test_coth_diffusion_oracles():
    exact = spectra.coth_diffusion_exact(1.0, 1.0, 20000, 1)
    assert stats.kstest(exact, lambda v: spectra.coth_diffusion_cdf(v, 1.0, 1.0)).pvalue > 0.01
    euler = spectra.coth_diffusion(1.0, 1.0, 20000, 2, dt=1e-4)
    assert stats.kstest(euler, lambda v: spectra.coth_diffusion_cdf(v, 1.0, 1.0)).statistic < 0.02
    b3 = spectra.coth_diffusion(0.0, 1.0, 20000, 3, dt=1e-4)
    assert stats.kstest(b3, stats.chi(3).cdf).statistic < 0.02


def test_scaling_ladder_validation():
    with pytest.raises(ValueError):
        spectra.ScalingLadder(0.0, (2, 4))
    with pytest.raises(ValueError):
        spectra.ScalingLadder(1.0, (4, 2))
    with pytest.raises(ValueError):
        spectra.ScalingLadder(1.0, (2,), target="X_bottom")


def test_spectrum_csv():
    import io
    sp = spectra.SpectrumPath(np.array([0.0, 1.0]), np.ones((1, 2, 2)))
    buf = io.StringIO()
    spectra.spectrum_to_csv(sp, buf)
    assert buf.getvalue().splitlines()[0] == "t,v0,v1"
