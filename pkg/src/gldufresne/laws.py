"""Samplers and log-densities: Wishart, inverse Wishart, scalar and matrix GIG.

Density conventions (real case, r x r, degrees of freedom p > r - 1):

    Wishart(p, S):  det(X)^{(p-r-1)/2} exp(-tr(S^{-1} X)/2) / (2^{pr/2} det(S)^{p/2} Gamma_r(p/2))

so that E[X] = p S.  For r = 1, S = 1 this is chi-square(p).  The inverse
Wishart law is the law of X^{-1}; with S = I and p = 2 mu it has density
proportional to det(X)^{-mu-(r+1)/2} exp(-tr(X^{-1})/2), and at r = 1 it is
the law of 1/(2 xi) with xi ~ Gamma(mu).

Complex (beta = 2) Wishart laws are those of G G^H with G an r x p matrix of
standard complex Gaussians (E|g|^2 = 1); density proportional to
det(X)^{p-r} exp(-tr(S^{-1} X)).

Matrix GIG eta_{p,A,B}: density proportional to
det(X)^{p-(r+1)/2} exp(-(tr(AX) + tr(BX^{-1}))/2) on the SPD cone, with total
mass 2 K_r(p | A, B).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .errors import DomainError, MixingFailure, PoleError
from .matcore import SPDMatrix, cholesky, hermitian_transpose, min_leading_minor, symmetrize


def _as_gen(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    if hasattr(rng, "generator"):
        return rng.generator()
    return np.random.default_rng(rng)


def _arr(X):
    return np.asarray(X.entries if isinstance(X, SPDMatrix) else X)


# ---------------------------------------------------------------------------
# multivariate gamma

def mvgamma(r, a):
    """log Gamma_r(a) = (r(r-1)/4) log(pi) + sum_{k=1}^r log Gamma(a - (k-1)/2).

    For arguments where some factor is negative the log of the absolute value
    is returned.  Raises PoleError at non-positive integer factor arguments.
    """
    a = np.asarray(a, float)
    args = a[..., None] - 0.5 * np.arange(r)
    if np.any((args <= 0) & (args == np.round(args))):
        raise PoleError(f"Gamma_{r}({a}) has a pole")
    out = 0.25 * r * (r - 1) * np.log(np.pi) + special.gammaln(args).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def mvgamma_complex(r, a):
    """log of the complex multivariate gamma pi^{r(r-1)/2} prod_{k=1}^r Gamma(a - k + 1)."""
    args = np.asarray(a, float)[..., None] - np.arange(r)
    if np.any((args <= 0) & (args == np.round(args))):
        raise PoleError("complex multivariate gamma pole")
    out = 0.5 * r * (r - 1) * np.log(np.pi) + special.gammaln(args).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Wishart

@dataclass(frozen=True)
class WishartSpec:
    r: int
    p: float
    scale: np.ndarray = None
    beta: int = 1

    def __post_init__(self):
        if self.beta not in (1, 2):
            raise ValueError("beta must be 1 or 2")
        if not self.p > self.r - 1:
            raise DomainError(f"Wishart dof p={self.p} must exceed r-1={self.r - 1}")
        if self.scale is not None:
            S = symmetrize(np.asarray(self.scale, complex if self.beta == 2 else float))
            cholesky(S)
            object.__setattr__(self, "scale", S)

    @property
    def scale_matrix(self):
        return np.eye(self.r) if self.scale is None else self.scale


def _bartlett(spec, gen, n):
    r, p = spec.r, spec.p
    if spec.beta == 1:
        T = np.zeros((n, r, r))
        for i in range(r):
            T[:, i, i] = np.sqrt(gen.chisquare(p - i, size=n))
            if i:
                T[:, i, :i] = gen.standard_normal((n, i))
    else:
        T = np.zeros((n, r, r), complex)
        for i in range(r):
            T[:, i, i] = np.sqrt(gen.gamma(p - i, size=n))
            if i:
                z = gen.standard_normal((n, i, 2)) / np.sqrt(2)
                T[:, i, :i] = z[..., 0] + 1j * z[..., 1]
    return T


def sample_wishart(spec, rng, size=None):
    """Bartlett construction L T T^H L^H, L = chol(scale).

    Returns shape (r, r) if size is None, else (size, r, r).
    """
    gen = _as_gen(rng)
    n = 1 if size is None else int(size)
    T = _bartlett(spec, gen, n)
    if spec.scale is not None:
        T = cholesky(spec.scale) @ T
    W = symmetrize(T @ hermitian_transpose(T))
    return W[0] if size is None else W


def sample_inv_wishart(spec, rng, size=None):
    """Inverse of a Wishart draw.  Mean is scale^{-1}/(p - r - 1) when p > r + 1."""
    if spec.beta == 1 and not spec.p > spec.r + 1:
        warnings.warn("inverse Wishart mean is infinite for p <= r + 1", stacklevel=2)
    W = sample_wishart(spec, rng, size)
    return symmetrize(np.linalg.inv(W))


def _logdet_checked(X):
    X = symmetrize(_arr(X))
    if np.any(~np.isfinite(X)) or np.any(min_leading_minor(X) <= 0):
        raise DomainError("argument is not positive definite")
    sign, ld = np.linalg.slogdet(X)
    return X, np.real(ld)


def wishart_logpdf(X, spec):
    """Log density of the Wishart law (stacks allowed)."""
    X, ld = _logdet_checked(X)
    r, p = spec.r, spec.p
    S = spec.scale_matrix
    Sinv = np.linalg.inv(S)
    tr = np.real(np.einsum("ij,...ji->...", Sinv, X))
    ldS = np.real(np.linalg.slogdet(S)[1])
    if spec.beta == 1:
        return 0.5 * (p - r - 1) * ld - 0.5 * tr - 0.5 * p * r * np.log(2) - 0.5 * p * ldS - mvgamma(r, p / 2)
    return (p - r) * ld - tr - p * ldS - mvgamma_complex(r, p)


def inv_wishart_logpdf(X, spec):
    """Log density of X when X^{-1} ~ Wishart(spec)."""
    X, ld = _logdet_checked(X)
    jac = (spec.r + 1) if spec.beta == 1 else 2 * spec.r
    return wishart_logpdf(np.linalg.inv(X), spec) - jac * ld


# ---------------------------------------------------------------------------
# Wishart eigenvalue density

@dataclass(frozen=True)
class EigDensitySpec:
    r: int
    mu: float
    beta: float = 1


def wishart_eig_logdensity(p, spec):
    """Unnormalized log density -V(p) of the eigenvalues of a beta-Wishart(2 mu) matrix.

    -V(p) = beta sum_{i>j} log(p_i - p_j) - (beta/2) sum p_i
            + beta (mu - (r + 2/beta - 1)/2) sum log p_i.
    ``p`` is sorted ascending (last axis); raises DomainError off the chamber.
    """
    p = np.asarray(p, float)
    if p.shape[-1] != spec.r:
        raise ValueError("eigenvalue vector has wrong length")
    if np.any(p <= 0) or np.any(np.diff(p, axis=-1) <= 0):
        raise DomainError("eigenvalues must be positive and strictly increasing")
    b, r, mu = spec.beta, spec.r, spec.mu
    gaps = p[..., :, None] - p[..., None, :]
    iu = np.triu_indices(r, 1)
    inter = np.log(-gaps[..., iu[0], iu[1]]).sum(axis=-1) if r > 1 else 0.0
    return b * inter - 0.5 * b * p.sum(axis=-1) + b * (mu - (r + 2.0 / b - 1) / 2) * np.log(p).sum(axis=-1)


# ---------------------------------------------------------------------------
# scalar GIG

def _gig_mode(lam, omega):
    return ((lam - 1) + np.sqrt((lam - 1) ** 2 + omega ** 2)) / omega


def _rou_bounds(lam, omega, m):
    """v-range of the mode-shifted ratio-of-uniforms region (density normalized at the mode)."""
    def logg(y):
        return (lam - 1) * np.log(y) - 0.5 * omega * (y + 1 / y) - ((lam - 1) * np.log(m) - 0.5 * omega * (m + 1 / m))

    def dlog(y):
        # derivative of log[(y - m) sqrt(g(y))], multiplied by (y - m)
        return 1 + (y - m) * 0.5 * ((lam - 1) / y - 0.5 * omega * (1 - 1 / y ** 2))

    hi = m * 2 + 1
    while dlog(hi) > 0:
        hi *= 2
    y_plus = optimize.brentq(dlog, m, hi, xtol=1e-14 * hi)
    lo = m / 2
    while dlog(lo) > 0:
        lo /= 2
    y_minus = optimize.brentq(dlog, lo, m, xtol=1e-14 * m)
    v_plus = (y_plus - m) * np.exp(0.5 * logg(y_plus))
    v_minus = (y_minus - m) * np.exp(0.5 * logg(y_minus))
    return v_minus, v_plus, logg


def _gig_standard(lam, omega, gen, n):
    """Draws from density prop. to y^{lam-1} exp(-omega (y + 1/y)/2), lam >= 0."""
    m = _gig_mode(lam, omega)
    vm, vp, logg = _rou_bounds(lam, omega, m)
    out = np.empty(n)
    filled = 0
    while filled < n:
        k = int(1.3 * (n - filled)) + 16
        u = gen.random(k)
        v = vm + (vp - vm) * gen.random(k)
        y = v / u + m
        ok = y > 0
        y, u = y[ok], u[ok]
        acc = 2 * np.log(u) <= logg(y)
        y = y[acc][: n - filled]
        out[filled:filled + len(y)] = y
        filled += len(y)
    return out


def sample_gig_scalar(p, a, b, rng, size=None):
    """Draw from GIG(p, a, b): density prop. to x^{p-1} exp(-(a x + b/x)/2).

    Ratio-of-uniforms with mode shift on the standardized law; b = 0 (p > 0)
    and a = 0 (p < 0) dispatch to Gamma and inverse Gamma.
    """
    gen = _as_gen(rng)
    n = 1 if size is None else int(size)
    if a < 0 or b < 0:
        raise DomainError("GIG needs a, b >= 0")
    if b == 0:
        if not (p > 0 and a > 0):
            raise DomainError("b = 0 requires p > 0 and a > 0")
        x = gen.gamma(p, 2.0 / a, size=n)
    elif a == 0:
        if not p < 0:
            raise DomainError("a = 0 requires p < 0")
        x = 1.0 / gen.gamma(-p, 2.0 / b, size=n)
    else:
        omega = np.sqrt(a * b)
        eta = np.sqrt(b / a)
        lam = abs(p)
        y = _gig_standard(lam, omega, gen, n)
        if p < 0:
            y = 1.0 / y
        x = eta * y
    return x[0] if size is None else x


def gig_mean(p, a, b):
    """E[X] for GIG(p, a, b) via exponentially scaled Bessel functions (vectorized)."""
    p, a, b = np.broadcast_arrays(*(np.asarray(v, float) for v in (p, a, b)))
    w = np.sqrt(a * b)
    return np.sqrt(b / a) * special.kve(p + 1, w) / special.kve(p, w)


# ---------------------------------------------------------------------------
# matrix GIG

@dataclass(frozen=True)
class MatrixGIGSpec:
    r: int
    p: float
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        for name in ("A", "B"):
            M = symmetrize(np.asarray(getattr(self, name), float).reshape(self.r, self.r))
            cholesky(M)
            object.__setattr__(self, name, M)


def matrix_gig_logpdf_unnorm(X, spec):
    """(p - (r+1)/2) log det X - (tr(AX) + tr(BX^{-1}))/2."""
    X, ld = _logdet_checked(X)
    r = spec.r
    trA = np.einsum("ij,...ji->...", spec.A, X)
    trB = np.einsum("ij,...ji->...", spec.B, np.linalg.inv(X))
    return (spec.p - (r + 1) / 2) * ld - 0.5 * (trA + trB)


class CholeskyCoords:
    """theta = (log L_11, ..., log L_rr, strictly lower entries of L), X = L L^T."""

    def __init__(self, r):
        self.r = r
        self.diag = np.arange(r)
        self.low = np.tril_indices(r, -1)
        self.d = r * (r + 1) // 2
        # Jacobian of theta -> X: 2^r prod L_ii^{r-i+1} (1-indexed) times prod L_ii
        self.jac_w = np.array([self.r - i + 1 for i in range(self.r)], float)

    def L(self, theta):
        theta = np.asarray(theta, float)
        L = np.zeros(theta.shape[:-1] + (self.r, self.r))
        L[..., self.diag, self.diag] = np.exp(theta[..., : self.r])
        L[..., self.low[0], self.low[1]] = theta[..., self.r:]
        return L

    def X(self, theta):
        L = self.L(theta)
        return L @ np.swapaxes(L, -1, -2)

    def theta(self, X):
        L = np.linalg.cholesky(symmetrize(X))
        return np.concatenate([np.log(L[..., self.diag, self.diag]), L[..., self.low[0], self.low[1]]], axis=-1)


def _gig_log_target(theta, spec, cc):
    """Log density of theta when X = L L^T ~ eta_{p,A,B} (unnormalized, Jacobian included)."""
    L = cc.L(theta)
    dg = theta[..., : cc.r]
    ld = 2 * dg.sum(axis=-1)
    X = L @ np.swapaxes(L, -1, -2)
    trA = np.einsum("ij,...ji->...", spec.A, X)
    Linv = np.linalg.inv(L)
    trB = np.einsum("...ij,jk,...ik->...", Linv, spec.B, Linv)
    lp = (spec.p - (cc.r + 1) / 2) * ld - 0.5 * (trA + trB)
    return lp + cc.r * np.log(2) + dg @ cc.jac_w


def laplace_fit(spec):
    """Mode and inverse Hessian of the log target in Cholesky coordinates."""
    cc = CholeskyCoords(spec.r)

    def nlp(th):
        return -float(_gig_log_target(th, spec, cc))

    # scalar warm start: r=1 GIG mode with a = tr A / r, b = tr B / r
    a, b = np.trace(spec.A) / spec.r, np.trace(spec.B) / spec.r
    lam = spec.p - (spec.r - 1) / 2
    w = np.sqrt(a * b)
    x0 = np.sqrt(b / a) * max(_gig_mode(lam, w), 1e-3) if w > 0 else 1.0
    th0 = np.concatenate([np.full(spec.r, 0.5 * np.log(x0)), np.zeros(cc.d - spec.r)])
    res = optimize.minimize(nlp, th0, method="BFGS", options={"gtol": 1e-8})
    th = res.x
    H = _fd_hessian(nlp, th)
    try:
        cov = np.linalg.inv(H)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = np.asarray(res.hess_inv)
    return th, symmetrize(cov)


def _fd_hessian(f, x, eps=1e-4):
    d = len(x)
    H = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        for j in range(i, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = eps
            ej[j] = eps
            if i == j:
                H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / eps ** 2
            else:
                H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * eps ** 2)
    return H


@dataclass(frozen=True)
class MCMCConfig:
    n_chains: int = 64
    n_samples: int = 4000
    burn_in: int = 1000
    thinning: int = 2
    target_accept: float = 0.3
    init_scale: float = 0.5


@dataclass
class GIGChain:
    """Output of ``sample_matrix_gig``.

    ``chains`` has shape (n_chains, n_per_chain, r, r); ``samples`` flattens it.
    """

    chains: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def samples(self):
        c = self.chains
        return c.reshape((-1,) + c.shape[2:])


def mh_accept_prob(logp_current, logp_proposal):
    """Metropolis acceptance probability for a symmetric proposal."""
    return np.minimum(1.0, np.exp(np.minimum(0.0, logp_proposal - logp_current)))


def autocorr_time(x):
    """Integrated autocorrelation time of chains x with shape (n_chains, n).

    Multi-chain autocorrelation rho_t = 1 - (W - mean autocovariance_t) / var+,
    where W is the mean within-chain variance and var+ also counts the
    between-chain variance, so chains stuck in different places give a long
    autocorrelation time.  Truncated by Geyer's initial positive sequence.
    """
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[None]
    c, n = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(xc, 2 * n, axis=1)
    acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :n] / n
    W = acov[:, 0].mean() * n / (n - 1)
    var_plus = W * (n - 1) / n + (x.mean(axis=1).var(ddof=1) if c > 1 else 0.0)
    if var_plus <= 0:
        return 1.0
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    tau = 1.0
    for k in range(1, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(max(tau, 1.0))


def sample_matrix_gig(spec, mcmc=MCMCConfig(), rng=0, check_mixing=True):
    """Random-walk Metropolis-within-Gibbs for eta_{p,A,B} in Cholesky coordinates.

    Coordinates are log-diagonal and off-diagonal entries of the Cholesky
    factor, so every state is SPD.  Per-coordinate proposal scales adapt toward
    the target acceptance rate during burn-in and are then frozen.  Chains start
    at the Laplace mode with independent Gaussian jitter.
    """
    gen = _as_gen(rng)
    cc = CholeskyCoords(spec.r)
    d = cc.d
    mode, cov = laplace_fit(spec)
    C = mcmc.n_chains
    theta = mode + gen.standard_normal((C, d)) @ np.linalg.cholesky(cov).T
    lp = _gig_log_target(theta, spec, cc)
    scale = mcmc.init_scale * np.sqrt(np.diag(cov))
    n_keep = mcmc.n_samples // C + (mcmc.n_samples % C > 0)
    total = mcmc.burn_in + n_keep * mcmc.thinning
    store = np.empty((C, n_keep, d))
    acc_count = np.zeros(d)
    acc_total = 0
    for sweep in range(total):
        burning = sweep < mcmc.burn_in
        for k in range(d):
            prop = theta.copy()
            prop[:, k] += scale[k] * gen.standard_normal(C)
            lpp = _gig_log_target(prop, spec, cc)
            acc = np.log(gen.random(C)) < lpp - lp
            theta[acc] = prop[acc]
            lp[acc] = lpp[acc]
            rate = acc.mean()
            if burning:
                scale[k] *= np.exp((rate - mcmc.target_accept) / np.sqrt(1.0 + sweep / 10.0))
            else:
                acc_count[k] += acc.sum()
        if not burning:
            acc_total += C
            j = sweep - mcmc.burn_in
            if j % mcmc.thinning == mcmc.thinning - 1:
                store[:, j // mcmc.thinning] = theta
    X = cc.X(store)
    n_total = C * n_keep
    ld = 2 * store[..., : spec.r].sum(axis=-1)
    tr = np.trace(X, axis1=-2, axis2=-1)
    ess = {}
    for name, series in (("trace", tr), ("logdet", ld)):
        ess[name] = n_total / autocorr_time(series)
    for i in range(spec.r):
        for j in range(i + 1):
            ess[f"x{i}{j}"] = n_total / autocorr_time(X[..., i, j])
    diag = {
        "acceptance": (acc_count / max(acc_total, 1)).tolist(),
        "proposal_scale": scale.tolist(),
        "ess": ess,
        "n_samples": n_total,
        "n_chains": C,
        "min_ess_per_1000": 1000 * min(ess.values()) / n_total,
    }
    if check_mixing and diag["min_ess_per_1000"] < 10:
        raise MixingFailure(f"ESS per 1000 samples = {diag['min_ess_per_1000']:.2f} < 10")
    return GIGChain(X, diag)


def chain_mean(chain):
    """Mean matrix and ESS-based standard errors of a GIGChain."""
    X = chain.chains
    n_total = X.shape[0] * X.shape[1]
    mean = X.mean(axis=(0, 1))
    se = np.empty_like(mean)
    r = mean.shape[0]
    for i in range(r):
        for j in range(r):
            tau = autocorr_time(X[..., i, j])
            se[i, j] = X[..., i, j].std() * np.sqrt(tau / n_total)
    return mean, se


def matrix_gig_importance(spec, n, rng, df=5.0, inflate=1.5):
    """Self-normalized importance sampling for eta_{p,A,B}.

    Proposal: multivariate t in Cholesky coordinates centred at the Laplace
    mode.  Returns (X samples, normalized weights, log of the estimated total
    mass 2 K_r(p|A,B), relative standard error of that mass).
    """
    gen = _as_gen(rng)
    cc = CholeskyCoords(spec.r)
    d = cc.d
    mode, cov = laplace_fit(spec)
    S = cov * inflate
    Lc = np.linalg.cholesky(S)
    z = gen.standard_normal((n, d))
    g = gen.chisquare(df, size=n) / df
    theta = mode + (z @ Lc.T) / np.sqrt(g)[:, None]
    # log density of the multivariate t
    q = np.sum(np.linalg.solve(Lc, (theta - mode).T) ** 2, axis=0)
    logq = (special.gammaln((df + d) / 2) - special.gammaln(df / 2) - 0.5 * d * np.log(df * np.pi)
            - np.log(np.diag(Lc)).sum() - 0.5 * (df + d) * np.log1p(q / df))
    logw = _gig_log_target(theta, spec, cc) - logq
    mx = logw.max()
    w = np.exp(logw - mx)
    logZ = mx + np.log(w.mean())
    rel_se = w.std() / (w.mean() * np.sqrt(n))
    return cc.X(theta), w / w.sum(), float(logZ), float(rel_se)


def matrix_gig_log_normalizer(spec, chain):
    """log of the total mass 2 K_r(p|A,B) from MCMC output by reciprocal importance sampling.

    Uses 1/Z = E_eta[q(theta)/pi(theta)] with q the Laplace Gaussian in
    Cholesky coordinates (lighter-tailed than the target).  Returns
    (log Z, relative standard error).
    """
    cc = CholeskyCoords(spec.r)
    X = chain.samples
    theta = cc.theta(X)
    mode, cov = laplace_fit(spec)
    Lc = np.linalg.cholesky(cov)
    d = cc.d
    q = np.sum(np.linalg.solve(Lc, (theta - mode).T) ** 2, axis=0)
    logq = -0.5 * d * np.log(2 * np.pi) - np.log(np.diag(Lc)).sum() - 0.5 * q
    logr = logq - _gig_log_target(theta, spec, cc)
    mx = logr.max()
    ratio = np.exp(logr - mx)
    n_eff = ratio.size / autocorr_time(ratio.reshape(chain.chains.shape[:2]))
    rel = ratio.std() / (ratio.mean() * np.sqrt(n_eff))
    return float(-(mx + np.log(ratio.mean()))), float(rel)


def lower_triangle_rows(X):
    """Flatten stacks of symmetric matrices to their lower triangles (row-major)."""
    X = np.asarray(X)
    r = X.shape[-1]
    il = np.tril_indices(r)
    return X[..., il[0], il[1]]


def write_samples_csv(X, fh):
    """CSV dump of a sample stack, one flattened lower triangle per row."""
    X = np.real(np.asarray(X))
    r = X.shape[-1]
    il = np.tril_indices(r)
    fh.write(",".join(f"x{i}{j}" for i, j in zip(*il)) + "\n")
    for row in lower_triangle_rows(X):
        fh.write(",".join(repr(float(v)) for v in row) + "\n")
