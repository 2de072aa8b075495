"""Macdonald and matrix K-Bessel functions, the matrix GIG mean, and related checks.

Conventions.  The Macdonald function is
    K_nu(x) = 1/2 int_0^inf t^{nu-1} exp(-x (t + 1/t)/2) dt,
and the matrix K-Bessel function is
    K_r(s | A, B) = 1/2 int_P p_s(X) exp(-tr(AX)/2 - tr(BX^{-1})/2) dmu_r(X),
with dmu_r(X) = det(X)^{-(r+1)/2} dX and p_s the power function of leading
minors.  A scalar index s stands for the vector (0, ..., 0, s).  At r = 1,
K_1(s | a, b) = (b/a)^{s/2} K_s(sqrt(ab)).

The normalized function U(Y) = K_r(-mu | Y, I) / (2^{r mu - 1} Gamma_r(mu)) is
the Laplace transform E exp(-tr(Y W)/2) of W ~ inverse Wishart(2 mu).
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special
from scipy.interpolate import RectBivariateSpline

from .errors import (
    DomainError,
    HighVariance,
    KappaEvaluationFailure,
    StepTooSmall,
    UnderflowToZero,
)
from .laws import (
    MCMCConfig,
    MatrixGIGSpec,
    WishartSpec,
    chain_mean,
    gig_mean,
    matrix_gig_importance,
    mvgamma,
    sample_matrix_gig,
    sample_wishart,
)
from .matcore import min_leading_minor, symmetrize

# ---------------------------------------------------------------------------
# Macdonald function


def _log_macdonald(nu, x):
    # K_nu(x) = e^{-x} int_0^inf cosh(nu u) e^{-x (cosh u - 1)} du, integrand scaled by its max
    nu = abs(float(nu))
    x = float(x)

    def g(u):
        return nu * u - x * (np.cosh(u) - 1.0)

    # maximum of nu u - x (cosh u - 1) is at sinh u = nu / x
    u_star = np.arcsinh(nu / x)
    g_star = g(u_star)
    # upper limit where the integrand has decayed by e^{-60}
    hi = max(u_star, 1.0)
    while g(hi) - g_star > -60:
        hi *= 1.5

    def f(u):
        return np.exp(g(u) - g_star) * 0.5 * (1.0 + np.exp(-2 * nu * u))

    pts = [u_star] if 0 < u_star < hi else None
    val, _ = integrate.quad(f, 0.0, hi, points=pts, epsabs=0.0, epsrel=1e-13, limit=200)
    return np.log(val) + g_star - x


def macdonald_K(nu, x, log=False):
    """Modified Bessel function of the second kind K_nu(x), x > 0, by quadrature.

    Uses K_nu(x) = int_0^inf cosh(nu u) exp(-x cosh u) du (the substitution
    t = e^u in the defining integral).  With ``log=True`` the natural log is
    returned, which stays finite where K_nu(x) underflows; otherwise an
    UnderflowToZero warning is issued and 0.0 returned in that case.
    """
    if not np.all(np.asarray(x) > 0):
        raise DomainError("macdonald_K needs x > 0")
    nus, xs = np.broadcast_arrays(np.asarray(nu, float), np.asarray(x, float))
    out = np.array([_log_macdonald(n, v) for n, v in zip(nus.ravel(), xs.ravel())]).reshape(nus.shape)
    if log:
        return float(out) if out.ndim == 0 else out
    if np.any(out < -745):
        warnings.warn("K_nu(x) underflows; use log=True", UnderflowToZero, stacklevel=2)
    val = np.exp(out)
    return float(val) if val.ndim == 0 else val


def bessel_ratio(nu, x):
    """K_{nu+1}(x) / K_nu(x) via exponentially scaled scipy Bessel functions (fast path)."""
    return special.kve(np.asarray(nu, float) + 1, x) / special.kve(nu, x)


# ---------------------------------------------------------------------------
# power function and the matrix K-Bessel function


def _index_vector(s, r):
    s = np.atleast_1d(np.asarray(s, float))
    if s.size == 1 and r > 1:
        s = np.concatenate([np.zeros(r - 1), s])
    if s.size != r:
        raise ValueError(f"index vector must have length {r}")
    return s


def leading_minors(Y):
    """det of the leading k x k blocks, k = 1..r, last axis indexes k."""
    Y = np.asarray(Y)
    r = Y.shape[-1]
    return np.stack([np.linalg.det(Y[..., :k, :k]) for k in range(1, r + 1)], axis=-1)


def log_power_function(s, Y):
    """log p_s(Y) = sum_k s_k log det(Y_k), Y_k the leading k x k block."""
    Y = symmetrize(np.asarray(Y, float))
    r = Y.shape[-1]
    s = _index_vector(s, r)
    d = leading_minors(Y)
    if np.any(d <= 0):
        raise DomainError("power function needs a positive definite argument")
    return np.log(d) @ s


def power_function(s, Y):
    """p_s(Y) = prod_k det(Y_k)^{s_k}."""
    return np.exp(log_power_function(s, Y))


@dataclass(frozen=True)
class BesselQuery:
    r: int
    s: object
    A: np.ndarray
    B: np.ndarray
    method: str = "auto"
    budget: int = 1_000_000

    def __post_init__(self):
        if self.method not in ("auto", "quadrature", "importance_mc"):
            raise ValueError("method must be 'auto', 'quadrature' or 'importance_mc'")
        if self.method == "importance_mc" and self.budget < 10_000:
            raise ValueError("Monte Carlo budget must be at least 1e4")
        for name in ("A", "B"):
            M = symmetrize(np.asarray(getattr(self, name), float).reshape(self.r, self.r))
            if np.any(min_leading_minor(M) <= 0):
                raise DomainError(f"{name} must be positive definite")
            object.__setattr__(self, name, M)


def log_kbessel_scalar(s, a, b):
    """log K_1(s | a, b) = (s/2) log(b/a) + log K_s(sqrt(ab)) by quadrature."""
    return 0.5 * s * np.log(b / a) + macdonald_K(s, np.sqrt(a * b), log=True)


def _kbessel_mc(q, rng):
    """Importance sampling for log K_r(s|A,B), r >= 2.

    The proposal absorbs the power of det X and one exponential factor: a
    Wishart(2 s_tot, A^{-1}) law when s_tot = sum(s) > (r-1)/2, an inverse
    Wishart(-2 s_tot, B^{-1}) law when s_tot < -(r-1)/2, and Wishart(r+1, A^{-1})
    in between.  Returns (log value, relative standard error).
    """
    r = q.r
    s = _index_vector(q.s, r)
    s_tot = s.sum()
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n = int(q.budget)
    half = (r - 1) / 2
    if s_tot < -half:
        p = -2 * s_tot
        W = _wishart_batches(WishartSpec(r, p, np.linalg.inv(q.B)), gen, n)
        X = np.linalg.inv(W)
        # proposal density of X: det X^{-p/2-(r+1)/2} exp(-tr(B X^{-1})/2) / Z
        logZ = 0.5 * r * p * np.log(2) - 0.5 * p * np.linalg.slogdet(q.B)[1] + mvgamma(r, p / 2)
        ldX = np.linalg.slogdet(X)[1]
        logw = (_log_ps(s, X) - s_tot * ldX) - 0.5 * np.einsum("ij,nji->n", q.A, X)
    else:
        p = 2 * s_tot if s_tot > half else r + 1.0
        Ainv = np.linalg.inv(q.A)
        X = _wishart_batches(WishartSpec(r, p, Ainv), gen, n)
        logZ = 0.5 * r * p * np.log(2) - 0.5 * p * np.linalg.slogdet(q.A)[1] + mvgamma(r, p / 2)
        ldX = np.linalg.slogdet(X)[1]
        Xinv = np.linalg.inv(X)
        logw = (_log_ps(s, X) - 0.5 * p * ldX) - 0.5 * np.einsum("ij,nji->n", q.B, Xinv)
    mx = logw.max()
    w = np.exp(logw - mx)
    mean = w.mean()
    rel = w.std() / (mean * np.sqrt(n))
    return float(np.log(0.5) + logZ + mx + np.log(mean)), float(rel)


def _log_ps(s, X):
    return np.log(leading_minors(X)) @ s


def _wishart_batches(spec, gen, n, batch=200_000):
    parts = []
    while n > 0:
        m = min(batch, n)
        parts.append(sample_wishart(spec, gen, m))
        n -= m
    return np.concatenate(parts)


def kbessel_matrix(q, rng=0, max_rel_err=0.05):
    """log K_r(s | A, B) and its standard error (on the log scale).

    r = 1 uses quadrature of the Macdonald function (standard error 0).
    r >= 2 uses importance sampling; raises HighVariance if the relative
    Monte Carlo error exceeds ``max_rel_err``.
    """
    r = q.r
    if r == 1 and q.method in ("auto", "quadrature"):
        s = float(_index_vector(q.s, 1)[0])
        return float(log_kbessel_scalar(s, q.A[0, 0], q.B[0, 0])), 0.0
    if q.method == "quadrature":
        raise ValueError("quadrature is only available for r = 1")
    val, rel = _kbessel_mc(q, rng)
    if rel > max_rel_err:
        raise HighVariance(f"relative MC error {rel:.3f} exceeds {max_rel_err}")
    return val, rel


# ---------------------------------------------------------------------------
# normalized Laplace transform U and the PDE residual


def U_scalar(y, mu):
    """U(y) = 2^{1-mu}/Gamma(mu) y^{mu/2} K_mu(sqrt(y)), U(0) = 1."""
    if y == 0:
        return 1.0
    logU = (1 - mu) * np.log(2) - special.gammaln(mu) + 0.5 * mu * np.log(y) + macdonald_K(mu, np.sqrt(y), log=True)
    return float(np.exp(logU))


def _sym_coords(r):
    return [(i, j) for i in range(r) for j in range(i, r)]


def _sym_basis(r, i, j):
    E = np.zeros((r, r))
    E[i, j] = E[j, i] = 1.0
    return E


def generator_apply(Y, mu, value, grad, hess):
    """G_Y applied through coordinates y_ij, i <= j.

    G = sum_{i<=j} sum_{k<=l} (y_ik y_jl + y_il y_jk) d^2/dy_ij dy_kl
        + (r + 1 - 2 mu) sum_{i<=j} y_ij d/dy_ij.
    ``grad`` and ``hess`` are indexed by the coordinate list of ``_sym_coords``.
    """
    r = Y.shape[0]
    coords = _sym_coords(r)
    out = 0.0
    for a, (i, j) in enumerate(coords):
        out += (r + 1 - 2 * mu) * Y[i, j] * grad[a]
        for b, (k, l) in enumerate(coords):
            out += (Y[i, k] * Y[j, l] + Y[i, l] * Y[j, k]) * hess[a, b]
    return out


def _fd_derivatives(f, Y, step):
    """Central differences of f in the symmetric coordinates of Y."""
    r = Y.shape[0]
    coords = _sym_coords(r)
    d = len(coords)
    E = [_sym_basis(r, i, j) for i, j in coords]
    f0 = f(Y)
    grad = np.empty(d)
    hess = np.empty((d, d))
    for a in range(d):
        fp, fm = f(Y + step * E[a]), f(Y - step * E[a])
        grad[a] = (fp - fm) / (2 * step)
        hess[a, a] = (fp - 2 * f0 + fm) / step ** 2
        for b in range(a + 1, d):
            fpp = f(Y + step * (E[a] + E[b]))
            fpm = f(Y + step * (E[a] - E[b]))
            fmp = f(Y - step * (E[a] - E[b]))
            fmm = f(Y - step * (E[a] + E[b]))
            hess[a, b] = hess[b, a] = (fpp - fpm - fmp + fmm) / (4 * step ** 2)
    return f0, grad, hess


class LaplaceTransformMC:
    """Monte Carlo U(Y) = mean exp(-tr(Y W_n)/2) over fixed draws W_n ~ inverse Wishart(2 mu).

    Holding the draws fixed gives common random numbers for every Y, so finite
    differences see a smooth function of Y.
    """

    def __init__(self, r, mu, n, rng):
        spec = WishartSpec(r, 2 * mu)
        gen = np.random.default_rng(rng)
        self.W = symmetrize(np.linalg.inv(_wishart_batches(spec, gen, int(n))))

    def __call__(self, Y):
        return float(np.mean(np.exp(-0.5 * np.einsum("ij,nji->n", Y, self.W))))


def pde_residual_U(Y, mu, fd_step=None, n_mc=1_000_000, rng=0, check_step=True):
    """|(G_Y U - tr(Y) U / 2) / U| for U(Y) = K_r(-mu|Y, I) / (2^{r mu - 1} Gamma_r(mu)).

    r = 1 evaluates U by quadrature; r >= 2 by Monte Carlo with common random
    numbers across the finite-difference stencil.  With ``check_step`` the
    residual is recomputed at half the step; if the two disagree by more than a
    factor 10 (round-off or MC noise dominating) StepTooSmall is raised.
    """
    Y = symmetrize(np.atleast_2d(np.asarray(Y, float)))
    r = Y.shape[0]
    if not 2 * mu > r - 1:
        raise DomainError("requires 2 mu > r - 1")
    if np.any(min_leading_minor(Y) <= 0):
        raise DomainError("Y must be positive definite")
    if fd_step is None:
        fd_step = 1e-3 * (1 + np.linalg.norm(Y, 2))
    if r == 1:
        def f(M):
            return U_scalar(float(M[0, 0]), mu)
    else:
        f = LaplaceTransformMC(r, mu, n_mc, rng)

    def residual(step):
        if np.linalg.eigvalsh(Y)[0] <= 4 * step:
            raise StepTooSmall("finite-difference stencil leaves the cone; decrease fd_step")
        u, g, H = _fd_derivatives(f, Y, step)
        return abs((generator_apply(Y, mu, u, g, H) - 0.5 * np.trace(Y) * u) / u)

    res = residual(fd_step)
    if check_step:
        res_half = residual(fd_step / 2)
        scale = max(res, res_half, 1e-12)
        if max(res, res_half) > 1e-8 and scale / max(min(res, res_half), 1e-300) > 10:
            raise StepTooSmall(f"residual unstable under step halving ({res:.2e} vs {res_half:.2e})")
    return float(res)


# ---------------------------------------------------------------------------
# Mellin multipliers


@dataclass(frozen=True)
class MellinIndex:
    r: int
    mu: float
    s: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in self.s)
        if len(s) != self.r or not np.all(np.isfinite(s)):
            raise ValueError("index needs r finite entries")
        object.__setattr__(self, "s", s)

    @property
    def rj(self):
        """r_j = 2 (s_j + ... + s_r)."""
        return 2 * np.cumsum(np.asarray(self.s)[::-1])[::-1]


def mellin_multipliers(idx):
    """(c1, c2, c3, residual) with residual = c3 + (2 mu - r - 1) c2 - c1."""
    rj = idx.rj
    i = np.arange(1, idx.r + 1)
    S1, S2, Si = rj.sum(), (rj ** 2).sum(), (i * rj).sum()
    c1 = S2 + (2 * idx.mu + idx.r + 1) * S1 - 2 * Si
    c2 = S1
    c3 = S2 + 2 * (idx.r + 1) * S1 - 2 * Si
    return c1, c2, c3, c3 + (2 * idx.mu - idx.r - 1) * c2 - c1


# ---------------------------------------------------------------------------
# matrix GIG mean


def kappa_mean(p, A, B, budget=20_000, rng=0, method="mcmc", mcmc=None):
    """Mean of eta_{p,A,B} with a standard-error matrix.

    ``method``: 'mcmc' (Metropolis-within-Gibbs chain), 'importance'
    (self-normalized importance sampling around the Laplace mode) or
    'quadrature' (r = 1 exact Bessel ratio; r = 2 with B = I and diagonal A by
    two-dimensional quadrature).
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    r = A.shape[0]
    if method == "quadrature":
        if r == 1:
            return np.array([[gig_mean(p, A[0, 0], B[0, 0])]]), np.zeros((1, 1))
        if r == 2 and np.allclose(B, np.eye(2)) and A[0, 1] == 0 and A[1, 0] == 0:
            k = kappa_diag_quadrature(p, A[0, 0], A[1, 1])
            return np.diag(k), np.zeros((2, 2))
        raise ValueError("quadrature needs r = 1, or r = 2 with B = I and diagonal A")
    spec = MatrixGIGSpec(r, p, A, B)
    if method == "importance":
        X, w, _, _ = matrix_gig_importance(spec, int(budget), rng)
        mean = np.einsum("n,nij->ij", w, X)
        ess = 1.0 / np.sum(w ** 2)
        var = np.einsum("n,nij->ij", w, (X - mean) ** 2)
        return mean, np.sqrt(var / ess)
    if method != "mcmc":
        raise ValueError("method must be 'mcmc', 'importance' or 'quadrature'")
    cfg = mcmc or MCMCConfig(n_samples=int(budget))
    chain = sample_matrix_gig(spec, cfg, rng)
    return chain_mean(chain)


def _log_weight_r2(sig, xi, mu, a1, a2):
    # X = [[s + u^2 x, u x], [u x, x]], s = e^sig, x = e^xi, u integrated out
    s, x = np.exp(sig), np.exp(xi)
    q = a1 * x + 1.0 / s
    return ((mu - 0.5) * sig + (mu + 0.5) * xi - 0.5 * np.log(q)
            - 0.5 * a1 * s - 0.5 * a2 * x - 0.5 / s - 0.5 / x)


def kappa_diag_quadrature(mu, a1, a2, n=121, rounds=3):
    """Diagonal of the mean of eta_{mu, diag(a1,a2), I} by 2-d quadrature.

    Parametrize X by its Schur complement s = x11 - x12^2/x22, u = x12/x22 and
    x22; the u-integral is Gaussian and done exactly, the (log s, log x22)
    integral by the trapezoid rule on a box refined around the bulk.
    """
    lo = np.array([-60.0, -60.0])
    hi = np.array([60.0, 60.0])
    for _ in range(rounds):
        g1 = np.linspace(lo[0], hi[0], n)
        g2 = np.linspace(lo[1], hi[1], n)
        S, Xi = np.meshgrid(g1, g2, indexing="ij")
        L = _log_weight_r2(S, Xi, mu, a1, a2)
        keep = L > L.max() - 45
        i = np.where(keep.any(axis=1))[0]
        j = np.where(keep.any(axis=0))[0]
        d1, d2 = g1[1] - g1[0], g2[1] - g2[0]
        lo = np.array([g1[max(i[0] - 1, 0)] - d1, g2[max(j[0] - 1, 0)] - d2])
        hi = np.array([g1[min(i[-1] + 1, n - 1)] + d1, g2[min(j[-1] + 1, n - 1)] + d2])
    g1 = np.linspace(lo[0], hi[0], 2 * n)
    g2 = np.linspace(lo[1], hi[1], 2 * n)
    S, Xi = np.meshgrid(g1, g2, indexing="ij")
    L = _log_weight_r2(S, Xi, mu, a1, a2)
    w = np.exp(L - L.max())
    s, x = np.exp(S), np.exp(Xi)
    Z = w.sum()
    k22 = (w * x).sum() / Z
    k11 = (w * (s + x / (a1 * x + 1.0 / s))).sum() / Z
    return np.array([k11, k22])


# ---------------------------------------------------------------------------
# kappa interpolation table for the singular-value SDE of Z (r = 2, B = I)


class KappaTable:
    """kappa_mu(diag(a1, a2), I) on a log-spaced lattice with cubic-spline interpolation.

    Stores log(kappa_11) on a square lattice in (log a1, log a2); kappa_22
    follows from the swap symmetry kappa_22(a1, a2) = kappa_11(a2, a1).  Below
    the lattice (some a_j under exp(lo)) the exact small-a_j limit is used:
    kappa_jj = 2 mu / a_j and, for the other index, kappa_ii = GIG mean with
    index mu - 1/2 at (a_i, 1) plus 1/a_i.  Above the lattice the arguments
    are clamped and counted in ``clamp_events``.
    """

    def __init__(self, mu, lo=-10.0, hi=14.0, step=0.25, values=None, method="quadrature",
                 budget=20_000, rng=0, max_rel_err=0.10):
        self.mu = float(mu)
        self.lo, self.hi = float(lo), float(hi)
        self.grid = np.arange(lo, hi + 1e-9, step)
        self.clamp_events = 0
        n = len(self.grid)
        if values is None:
            values = np.empty((n, n))
            for i in range(n):
                for j in range(i, n):
                    a1, a2 = np.exp(self.grid[i]), np.exp(self.grid[j])
                    if method == "quadrature":
                        k = kappa_diag_quadrature(self.mu, a1, a2)
                    else:
                        K, se = kappa_mean(self.mu, np.diag([a1, a2]), np.eye(2), budget,
                                           rng=rng + 1000 * i + j,
                                           method="importance")
                        k = np.diag(K)
                        if np.any(np.diag(se) > max_rel_err * k):
                            raise KappaEvaluationFailure(
                                f"kappa MC error above {max_rel_err:.0%} at a=({a1:.3g},{a2:.3g})")
                    values[i, j] = np.log(k[0])
                    values[j, i] = np.log(k[1])
        self.values = np.asarray(values)
        self._spline = RectBivariateSpline(self.grid, self.grid, self.values, kx=3, ky=3)

    def _lattice(self, l1, l2):
        return np.exp(self._spline.ev(l1, l2))

    def diag(self, a1, a2):
        """(kappa_11, kappa_22) for arrays a1, a2 > 0."""
        l1 = np.log(np.asarray(a1, float))
        l2 = np.log(np.asarray(a2, float))
        over = (l1 > self.hi) | (l2 > self.hi)
        self.clamp_events += int(np.count_nonzero(over))
        l1c = np.minimum(l1, self.hi)
        l2c = np.minimum(l2, self.hi)
        k1 = np.empty(np.broadcast(l1c, l2c).shape)
        k2 = np.empty_like(k1)
        under = (l1c < self.lo) | (l2c < self.lo)
        inside = ~under
        if np.any(inside):
            k1[inside] = self._lattice(l1c[inside], l2c[inside])
            k2[inside] = self._lattice(l2c[inside], l1c[inside])
        if np.any(under):
            b1, b2 = np.exp(l1c[under]), np.exp(l2c[under])
            small1 = l1c[under] < l2c[under]
            big = np.where(small1, b2, b1)
            small = np.where(small1, b1, b2)
            k_small = 2 * self.mu / small
            k_big = gig_mean(self.mu - 0.5, big, 1.0) + 1.0 / big
            k1[under] = np.where(small1, k_small, k_big)
            k2[under] = np.where(small1, k_big, k_small)
        return k1, k2

    def to_csv(self, fh):
        fh.write("log_a1,log_a2,kappa11,kappa22\n")
        for i, l1 in enumerate(self.grid):
            for j, l2 in enumerate(self.grid):
                fh.write(f"{l1!r},{l2!r},{np.exp(self.values[i, j])!r},{np.exp(self.values[j, i])!r}\n")
