import json

import numpy as np
import pytest

from gldufresne import verify
from gldufresne.errors import DomainError, InsufficientSamples
from gldufresne.laws import WishartSpec, sample_inv_wishart
from gldufresne.verify import FunctionalSet, energy_test, two_sample_test


def _iw(seed, n=1000, p=6.0):
    return sample_inv_wishart(WishartSpec(2, p), seed, n)


def test_functional_set_values():
    S = np.array([[[2.0, 0.0], [0.0, 0.5]]])
    fs = FunctionalSet("spd", ("trace", "logdet", "max_eig", "min_eig", "trace_inv"))
    assert np.allclose(fs.apply(S), [[2.5, 0.0, 2.0, 0.5, 2.5]])
    G = FunctionalSet("general").apply(np.array([[[3.0, 1.0], [0.0, 2.0]]]))
    assert np.isclose(G[0, 0], np.log(6.0))
    with pytest.raises(ValueError):
        FunctionalSet("banana")


def test_probe_vector_is_seeded():
    a, b = FunctionalSet.spd(3, 1), FunctionalSet.spd(3, 1)
    assert np.array_equal(a.probe, b.probe) and np.isclose(np.linalg.norm(a.probe), 1)


def test_same_law_passes_and_shift_fails():
    rep = two_sample_test(_iw(1), _iw(2), alpha=0.01, rng=0)
    assert rep.passed and rep.sizes == (1000, 1000)
    bad = two_sample_test(_iw(1), _iw(2, p=8.0), alpha=0.01, rng=0)
    assert not bad.passed


def test_insufficient_samples():
    with pytest.raises(InsufficientSamples):
        two_sample_test(_iw(1, 100), _iw(2, 1000))


def test_energy_test_power_and_null():
    gen = np.random.default_rng(0)
    X, Y = gen.standard_normal((600, 3)), gen.standard_normal((600, 3))
    _, p0 = energy_test(X, Y, rng=1)
    _, p1 = energy_test(X, Y + np.array([0.3, 0, 0]), rng=1)
    assert p0 > 0.01 and p1 < 0.01


def test_energy_detects_dependence_change_invisible_to_marginals():
    gen = np.random.default_rng(1)
    X = gen.standard_normal((1500, 2))
    z = gen.standard_normal(1500)
    Y = np.column_stack([z, 0.8 * z + 0.6 * gen.standard_normal(1500)])
    _, p = energy_test(X, Y, rng=2)
    assert p < 0.01


def test_calibration_under_the_null():
    # each named test passes with frequency >= 1 - 2 alpha; 60 seeds, allow binomial slack
    alpha = 0.05
    fails = sum(not two_sample_test(_iw(2 * s, 600), _iw(2 * s + 1, 600), alpha=alpha, n_perm=100, rng=s).passed
                for s in range(60))
    assert fails / 60 <= 2 * alpha + 0.08


def test_power_grows_with_sample_size():
    def rejection(n):
        return np.mean([not two_sample_test(_iw(s, n), _iw(100 + s, n, p=6.6), n_perm=100, rng=s).passed
                        for s in range(10)])
    assert rejection(2000) >= rejection(600)


def test_report_json_is_deterministic_and_excludes_runtime():
    a = two_sample_test(_iw(1), _iw(2), rng=3)
    b = two_sample_test(_iw(1), _iw(2), rng=3)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json(config={"x": 1}))
    assert "runtime" not in d and d["config"] == {"x": 1} and "samples" not in d
    csv = verify.summary_csv([a])
    assert csv.splitlines()[0] == "name,p_value,passed,p_ks,p_energy"


def test_domain_errors():
    with pytest.raises(DomainError):
        verify.dufresne_test(3, 0.9, n_paths=10)
    with pytest.raises(DomainError):
        verify.z_sign_flip_test(3, 0.5, n_paths=10)
    with pytest.raises(DomainError):
        verify.burke_tests(2, 0.4, n_paths=10)


def test_lyapunov_targets_sum_rule():
    t = verify.lyapunov_targets(3, 2.0)
    assert np.allclose(t, [1.0, 2.0, 3.0]) and np.isclose(t.sum(), 3 * 2.0)
    assert np.isclose(t[-1], 2.0 + (3 - 1) / 2)


def test_bm_battery_detects_drift():
    gen = np.random.default_rng(0)
    D1, D2 = gen.standard_normal((4000, 2, 2)), gen.standard_normal((4000, 2, 2))
    assert verify._bm_battery(D1, D2, 1.0, 0.01, "ok").passed
    assert not verify._bm_battery(D1 + 0.2, D2, 1.0, 0.01, "drift").passed
    assert not verify._bm_battery(D1, D1 * 0.5 + D2 * 0.87, 1.0, 0.01, "correlated").passed


def test_scalar_dufresne_small():
    rep = verify.dufresne_test(1, 2.5, n_paths=1500, rng=4)
    assert rep.passed and rep.extra["ks_exact_p"] > 0.01
    assert np.isclose(rep.extra["target_mean"][0, 0], 1 / 3)


def test_conditional_gig_scalar():
    rep = verify.conditional_gig_diagnostic(1, 1.5, n_paths=20000, rng=2)
    row = rep.extra["bandwidths"][0]
    assert row["neighbors"] >= 300
    assert row["rel_err_vs_center"] < 0.10


def test_kappa_identity_check():
    rep = verify.kappa_identity_check(1.5, (1.0, 2.0), 20000, rng=1)
    assert rep.passed
    assert np.allclose(rep.extra["exact_diag_plus"] - rep.extra["exact_diag_minus"], 3.0)
