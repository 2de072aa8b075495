import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from gldufresne.bessel import kappa_diag_quadrature
from gldufresne.errors import DomainError, MixingFailure, PoleError
from gldufresne.laws import (
    CholeskyCoords,
    EigDensitySpec,
    MCMCConfig,
    MatrixGIGSpec,
    WishartSpec,
    _gig_log_target,
    autocorr_time,
    chain_mean,
    gig_mean,
    inv_wishart_logpdf,
    laplace_fit,
    matrix_gig_importance,
    matrix_gig_logpdf_unnorm,
    mh_accept_prob,
    mvgamma,
    sample_gig_scalar,
    sample_inv_wishart,
    sample_matrix_gig,
    sample_wishart,
    wishart_eig_logdensity,
    wishart_logpdf,
)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.floats(3.1, 20))
def test_mvgamma_matches_scipy(r, a):
    assert np.isclose(mvgamma(r, a), special.multigammaln(a, r))


def test_mvgamma_pole():
    with pytest.raises(PoleError):
        mvgamma(2, 0.5)


def test_wishart_logpdf_matches_scipy():
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    spec = WishartSpec(2, 5.0, S)
    X = sample_wishart(spec, 0, 20)
    ref = stats.wishart(df=5, scale=S).logpdf(np.moveaxis(X, 0, -1))
    assert np.allclose(wishart_logpdf(X, spec), ref)
    ref_inv = stats.invwishart(df=5, scale=np.linalg.inv(S)).logpdf(np.moveaxis(np.linalg.inv(X), 0, -1))
    assert np.allclose(inv_wishart_logpdf(np.linalg.inv(X), spec), ref_inv)


def test_wishart_logpdf_domain():
    with pytest.raises(DomainError):
        wishart_logpdf(np.diag([1.0, -1.0]), WishartSpec(2, 4.0))
    with pytest.raises(DomainError):
        WishartSpec(3, 1.5)


def test_complex_wishart_density_integrates_to_one_r1():
    # r = 1 complex Wishart(p) is Gamma(p) with unit scale
    spec = WishartSpec(1, 3.0, beta=2)
    val, _ = integrate.quad(lambda x: np.exp(wishart_logpdf(np.array([[x]]), spec)), 0, np.inf)
    assert np.isclose(val, 1.0)


@pytest.mark.parametrize("beta", [1, 2])
def test_wishart_and_inverse_means(beta):
    r, p = 3, 9.0
    W = sample_wishart(WishartSpec(r, p, beta=beta), 1, 40000)
    assert np.allclose(W.mean(axis=0), p * np.eye(r), atol=0.15)
    if beta == 1:
        V = sample_inv_wishart(WishartSpec(r, p), 2, 40000)
        assert np.allclose(V.mean(axis=0), np.eye(r) / (p - r - 1), atol=0.01)


def test_inverse_wishart_r1_is_inverse_gamma():
    x = sample_inv_wishart(WishartSpec(1, 3.0), 3, 20000)[:, 0, 0]
    assert stats.kstest(x, stats.invgamma(1.5, scale=0.5).cdf).pvalue > 0.01


def test_inverse_wishart_warns_for_infinite_mean():
    with pytest.warns(UserWarning):
        sample_inv_wishart(WishartSpec(2, 2.5), 0, 5)


def test_eig_density_matches_wishart_eigenvalues_r2():
    # normalized eigenvalue density integrated against the empirical law of Wishart(2 mu) eigenvalues
    mu = 2.5
    spec = EigDensitySpec(2, mu)
    W = sample_wishart(WishartSpec(2, 2 * mu), 4, 20000)
    ev = np.linalg.eigvalsh(W)
    Z, _ = integrate.dblquad(lambda p2, p1: np.exp(wishart_eig_logdensity(np.array([p1, p2]), spec)),
                             0, 60, lambda p1: p1, 60)
    m, _ = integrate.dblquad(lambda p2, p1: p1 * np.exp(wishart_eig_logdensity(np.array([p1, p2]), spec)),
                             0, 60, lambda p1: p1, 60)
    assert np.isclose(m / Z, ev[:, 0].mean(), rtol=0.03)


def test_eig_density_domain():
    with pytest.raises(DomainError):
        wishart_eig_logdensity(np.array([2.0, 1.0]), EigDensitySpec(2, 2.0))


@pytest.mark.parametrize("p,a,b", [(0.7, 2.0, 1.0), (-1.5, 1.0, 3.0), (2.5, 0.5, 0.2), (-0.2, 4.0, 4.0)])
def test_scalar_gig_sampler_against_scipy(p, a, b):
    x = sample_gig_scalar(p, a, b, 11, 20000)
    ref = stats.geninvgauss(p, np.sqrt(a * b), scale=np.sqrt(b / a))
    assert stats.kstest(x, ref.cdf).pvalue > 0.001
    assert np.isclose(gig_mean(p, a, b), ref.mean())


def test_scalar_gig_limits():
    x = sample_gig_scalar(2.0, 1.0, 0.0, 0, 20000)
    assert stats.kstest(x, stats.gamma(2.0, scale=2.0).cdf).pvalue > 0.001
    y = sample_gig_scalar(-1.5, 0.0, 1.0, 0, 20000)
    assert stats.kstest(y, stats.invgamma(1.5, scale=0.5).cdf).pvalue > 0.001


def test_cholesky_coords_roundtrip_and_jacobian():
    cc = CholeskyCoords(2)
    gen = np.random.default_rng(0)
    th = gen.standard_normal(3)
    assert np.allclose(cc.theta(cc.X(th)), th)

    def vec(t):
        X = cc.X(t)
        return np.array([X[0, 0], X[1, 0], X[1, 1]])
    eps = 1e-6
    J = np.column_stack([(vec(th + eps * e) - vec(th - eps * e)) / (2 * eps) for e in np.eye(3)])
    # with A = B = 0 and p = (r+1)/2 the target is the log-Jacobian alone
    spec = MatrixGIGSpec.__new__(MatrixGIGSpec)
    object.__setattr__(spec, "r", 2)
    object.__setattr__(spec, "p", 1.5)
    object.__setattr__(spec, "A", np.zeros((2, 2)))
    object.__setattr__(spec, "B", np.zeros((2, 2)))
    assert np.isclose(_gig_log_target(th, spec, cc), np.log(abs(np.linalg.det(J))), atol=1e-6)


def test_gig_target_is_density_plus_jacobian_for_general_B():
    # regression: tr(B X^{-1}) must use X = L L^T, not L^T L
    spec = MatrixGIGSpec(2, -1.5, np.eye(2), np.array([[1.0, 0.4], [0.4, 2.0]]))
    cc = CholeskyCoords(2)
    th = np.array([0.3, -0.2, 0.7])
    X = cc.X(th)
    d = _gig_log_target(th, spec, cc) - matrix_gig_logpdf_unnorm(X, spec)
    d2 = _gig_log_target(th + 0.1, spec, cc) - matrix_gig_logpdf_unnorm(cc.X(th + 0.1), spec)
    L = cc.L(th)
    L2 = cc.L(th + 0.1)
    jac = lambda L: np.log(4) + 3 * np.log(L[0, 0]) + 2 * np.log(L[1, 1])
    assert np.isclose(d - d2, jac(L) - jac(L2))


def _brute_kappa(p, A, B, n=241):
    # exact mean of eta_{p,A,B} for r = 2 on a log-diagonal / correlation grid
    g = np.linspace(-9, 6, n)
    rho = np.linspace(-1, 1, 401)[1:-1]
    L1, L2, R = np.meshgrid(g, g, rho, indexing="ij")
    x1, x2 = np.exp(L1), np.exp(L2)
    x12 = R * np.sqrt(x1 * x2)
    det = x1 * x2 - x12 ** 2
    trA = A[0, 0] * x1 + A[1, 1] * x2 + 2 * A[0, 1] * x12
    trB = (B[0, 0] * x2 + B[1, 1] * x1 - 2 * B[0, 1] * x12) / det
    lw = (p - 1.5) * np.log(det) - 0.5 * (trA + trB) + 1.5 * np.log(x1 * x2)
    w = np.exp(lw - lw.max())
    w /= w.sum()
    return np.array([[(w * x1).sum(), (w * x12).sum()], [(w * x12).sum(), (w * x2).sum()]])


@pytest.mark.parametrize("p,A,B", [
    (1.5, np.eye(2), np.diag([1.0, 2.0])),
    (-1.5, np.eye(2), np.diag([1.0, 2.0])),
    (0.8, np.array([[1.5, 0.3], [0.3, 0.7]]), np.array([[1.0, -0.2], [-0.2, 0.5]])),
])
def test_matrix_gig_mcmc_mean_against_brute_force(p, A, B):
    spec = MatrixGIGSpec(2, p, A, B)
    chain = sample_matrix_gig(spec, MCMCConfig(n_samples=40000), 3)
    mean, se = chain_mean(chain)
    exact = _brute_kappa(p, A, B)
    assert np.all(np.abs(mean - exact) < 4 * se + 1e-3)
    assert 0.1 < np.mean(chain.diagnostics["acceptance"]) < 0.6


def test_matrix_gig_importance_mean():
    spec = MatrixGIGSpec(2, -1.5, np.eye(2), np.diag([1.0, 2.0]))
    X, w, _, _ = matrix_gig_importance(spec, 100000, 1)
    mean = np.einsum("n,nij->ij", w, X)
    assert np.allclose(np.diag(mean), [1, 2] * kappa_diag_quadrature(-1.5, 1.0, 2.0), rtol=0.03)


def test_matrix_gig_r1_matches_scalar_gig():
    spec = MatrixGIGSpec(1, 0.7, np.array([[2.0]]), np.array([[1.0]]))
    chain = sample_matrix_gig(spec, MCMCConfig(n_samples=20000), 5)
    ref = stats.geninvgauss(0.7, np.sqrt(2.0), scale=np.sqrt(0.5))
    assert stats.kstest(chain.samples[:, 0, 0], ref.cdf).statistic < 0.03


def test_laplace_mode_is_stationary_point():
    spec = MatrixGIGSpec(2, 2.0, np.eye(2), np.eye(2))
    mode, cov = laplace_fit(spec)
    cc = CholeskyCoords(2)
    eps = 1e-5
    grad = [(_gig_log_target(mode + eps * e, spec, cc) - _gig_log_target(mode - eps * e, spec, cc)) / (2 * eps)
            for e in np.eye(3)]
    assert np.allclose(grad, 0, atol=1e-4)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_detailed_balance_on_two_states():
    # symmetric proposal between two states: pi(x) P(x->y) = pi(y) P(y->x)
    spec = MatrixGIGSpec(2, 1.3, np.diag([1.0, 2.0]), np.eye(2))
    cc = CholeskyCoords(2)
    x, y = np.array([0.1, -0.3, 0.2]), np.array([0.4, 0.0, -0.5])
    lx, ly = _gig_log_target(x, spec, cc), _gig_log_target(y, spec, cc)
    assert np.isclose(np.exp(lx) * mh_accept_prob(lx, ly), np.exp(ly) * mh_accept_prob(ly, lx))


def test_autocorr_time_of_ar1():
    gen = np.random.default_rng(0)
    phi = 0.8
    x = np.zeros((8, 20000))
    for t in range(1, x.shape[1]):
        x[:, t] = phi * x[:, t - 1] + gen.standard_normal(8)
    assert np.isclose(autocorr_time(x), (1 + phi) / (1 - phi), rtol=0.15)


def test_mixing_failure_is_reported():
    spec = MatrixGIGSpec(2, 1.5, np.eye(2), np.eye(2))
    cfg = MCMCConfig(n_chains=4, n_samples=400, burn_in=1, thinning=1, init_scale=1e-4)
    with pytest.raises(MixingFailure):
        sample_matrix_gig(spec, cfg, 0)
