"""Acceptance criteria at their stated tolerances, one test per criterion.

Every test records a single PASS/FAIL line which the terminal summary prints in order.
These are long Monte Carlo runs (marked ``slow``); deselect them with ``-m "not slow"``.
"""

import time

import numpy as np
import pytest

from gldufresne import bessel, cli, verify

pytestmark = pytest.mark.slow


def _run(**cfg):
    rep, _ = cli.run_suite(cli.validate_config(cfg), write=False)
    return rep


def test_01_scalar_dufresne(record):
    rep = _run(experiment="dufresne", r=1, mu=1.5, n_paths=50000, seed=0)
    mean, se = rep.extra["mean"][0, 0], rep.extra["se"][0, 0]
    ok = abs(mean - 1.0) < 0.05 and abs(mean - 1.0) < 3 * se + 0.05 and rep.extra["ks_exact_p"] > 0.01
    record(1, "scalar Dufresne r=1 mu=1.5", ok, f"mean={mean:.4f} se={se:.4f} ks_p={rep.extra['ks_exact_p']:.3f}")
    assert ok


def test_02_matrix_dufresne(record):
    rep = _run(experiment="dufresne", r=2, mu=3.0, n_paths=5000, seed=0, alpha=0.01)
    rel = rep.extra["mean_rel_err"]
    ok = rep.passed and np.all(rel < 0.05)
    record(2, "matrix Dufresne r=2 mu=3", ok, f"p={rep.p_value:.3f} max_rel_err={np.max(rel):.4f}")
    assert ok


def test_03_bessel_pde(record):
    r1 = max(abs(bessel.pde_residual_U(np.array([[y]]), 1.5)) for y in (0.25, 1.0, 4.0))
    r2 = abs(bessel.pde_residual_U(np.eye(2), 3.0, n_mc=1_000_000, rng=0))
    ok = r1 < 1e-4 and r2 < 5e-2
    record(3, "K-Bessel PDE", ok, f"r=1 residual={r1:.2e} r=2 residual={r2:.2e}")
    assert ok


def test_04_mellin(record):
    t0 = time.perf_counter()
    rep = _run(experiment="mellin", n_indices=1000, r=6, seed=0)
    wall = time.perf_counter() - t0
    ok = rep.passed and wall < 1.0
    record(4, "Mellin multipliers", ok, f"max_scaled_residual={rep.extra['max_scaled_residual']:.1e} "
                                        f"runtime={wall:.3f}s")
    assert ok


def test_05_process_dufresne(record):
    rep = _run(experiment="process-dufresne", r=2, mu=3.0, n_paths=5000, times=[0.5, 1.0, 2.0],
               joint=[0.5, 1.5], alpha=0.01, seed=0)
    frac = rep.extra["rhs_spd_fraction"]
    ok = rep.passed and frac == 1.0
    record(5, "process Dufresne r=2 mu=3", ok,
           f"p={[round(float(p.p_value), 3) for p in rep.parts]} spd_fraction={frac}")
    assert ok


def test_06_z_sign_flip(record):
    rep = _run(experiment="z-flip", r=2, mu=1.0, n_paths=5000, alpha=0.01, seed=0)
    main, ctrl = rep.parts
    record(6, "Z invariance under mu -> -mu", rep.passed,
           f"p={main.p_value:.3f} control(mu vs 2mu) p={ctrl.p_value:.2e}")
    assert main.passed and not ctrl.passed


def test_07_kappa_identity(record):
    rep = verify.kappa_identity_check(1.5, (1.0, 2.0), 20000, rng=0)
    e = rep.extra
    record(7, "kappa_mu - kappa_-mu = 2 mu I", rep.passed,
           f"|D|={e['norm']:.4f} 3sigma={3 * e['joint_sigma']:.4f} "
           f"max|offdiag_z|={np.max(np.abs(e['offdiag_z'])):.2f}")
    assert rep.passed


def test_08_burke(record):
    oioo = _run(experiment="burke-oioo", r=2, mu=3.0, n_paths=10000, alpha=0.01, seed=0)
    tito = _run(experiment="burke-tito", r=2, mu=3.0, n_paths=10000, alpha=0.01, seed=0)
    ok = oioo.passed and tito.passed
    record(8, "Burke OIOO and TITO r=2 mu=3", ok,
           f"oioo p={oioo.p_value:.3f} tito={tito.parts[0].passed} control_fails={not tito.parts[1].passed}")
    assert ok


@pytest.fixture(scope="module")
def lyapunov_report():
    return _run(experiment="lyapunov", r=3, mu=2.0, T=50.0, n_paths=200, seed=0)


def test_09_lyapunov_growth_rates(lyapunov_report):
    # the exponents mu + i - (r+1)/2 forced by the singular-value SDE and the sum rule r*mu
    e = lyapunov_report.extra
    assert np.all(e["abs_err"] < 0.07), e["estimate"]


@pytest.mark.xfail(strict=True, reason="stated targets (2.0, 2.5, 3.0) contradict the singular-value drift "
                                       "and the sum rule sum(exponents) = r*mu; estimates are (1, 2, 3)")
def test_09_lyapunov_stated_targets(lyapunov_report, record):
    est = lyapunov_report.extra["estimate"]
    err = np.abs(est - np.array([2.0, 2.5, 3.0]))
    ok = bool(np.all(err < 0.07))
    record(9, "Lyapunov exponents vs (2.0, 2.5, 3.0)", ok,
           f"estimate={np.round(est, 3).tolist()} (mu+i-(r+1)/2 gives [1, 2, 3])")
    assert ok


def test_10_eigenvalue_sdes(record):
    rep = _run(experiment="eig-consistency", r=2, mu=3.0, n_paths=5000, alpha=0.01, seed=0)
    record(10, "eigenvalue SDE consistency", rep.passed,
           "  ".join(f"{p.name}: p={p.p_value:.3f}" for p in rep.parts))
    assert rep.passed


def test_11_scaling_limits(record):
    x = _run(experiment="scaling-x", r=2, c=[8.0], gamma=1.0, n_paths=5000, seed=0)
    z = _run(experiment="scaling-z", r=2, c=[8.0], gamma=1.0, n_paths=5000, seed=0)
    kx, kz = x.extra["rungs"][-1]["ks_exact"], z.extra["rungs"][-1]["ks_exact"]
    b3 = z.extra["bessel3_ks"]
    ok = kx < 0.1 and kz < 0.1 and b3 < 0.05
    record(11, "scaling limits c=8", ok, f"X ks={kx:.3f} Z ks={kz:.3f} Bessel(3) ks={b3:.3f}")
    assert ok


def test_12_stationarity(record):
    rep = _run(experiment="stationarity-q", r=2, mu=3.0, T=2.0, n_paths=5000, seed=0)
    record(12, "stationarity of Q", rep.passed, f"max_rel_dev={np.max(rep.extra['rel_dev']):.4f}")
    assert rep.passed


@pytest.mark.exploratory
def test_13_conditional_gig(record):
    r1 = _run(experiment="gig-diagnostic", r=1, mu=1.5, n_paths=20000, seed=0)
    r2 = _run(experiment="gig-diagnostic", r=2, mu=1.5, n_paths=20000, seed=0)
    ok = r1.passed and r2.passed
    e1, e2 = r1.extra["bandwidths"][0], r2.extra["bandwidths"][0]
    record(13, "conditional GIG diagnostic (exploratory)", ok,
           f"r=1 rel_err={e1['rel_err_vs_center']:.3f} shrinks={r1.extra['bias_shrinks']} "
           f"r=2 rel_err={e2['rel_err_vs_center']:.3f}")
    if not ok:
        pytest.xfail("exploratory diagnostic is non-blocking")
