"""Small dense matrix arithmetic, SPD helpers and matrix Brownian increments.

All routines accept stacked inputs of shape ``(..., r, r)`` so that many Monte
Carlo paths can be advanced at once.  Random numbers come from one counter-based
stream per path (``RngStream``), so the samples of a path do not depend on how
paths are batched or on the order in which batches run.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, NotPositiveDefinite

PIVOT_TOL = 1e-12


def hermitian_transpose(S):
    """Conjugate transpose over the last two axes."""
    S = np.asarray(S)
    T = np.swapaxes(S, -1, -2)
    return np.conj(T) if np.iscomplexobj(T) else T


def symmetrize(S):
    """(S + S^H)/2 on the last two axes."""
    S = np.asarray(S)
    return 0.5 * (S + hermitian_transpose(S))


def eye_like(S):
    S = np.asarray(S)
    return np.broadcast_to(np.eye(S.shape[-1], dtype=S.dtype), S.shape)


def trace(S):
    return np.trace(S, axis1=-2, axis2=-1)


class SPDMatrix:
    """Symmetric (Hermitian) positive definite matrix with a cached Cholesky factor.

    Construction symmetrizes the input and fails with ``NotPositiveDefinite``
    unless the factorization succeeds with pivots above ``PIVOT_TOL * trace``.
    """

    def __init__(self, entries):
        S = symmetrize(np.array(entries))
        if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
            raise ValueError("SPDMatrix needs a square 2-d array")
        if not np.all(np.isfinite(S)):
            raise NotPositiveDefinite("non-finite entries")
        S.setflags(write=False)
        self.entries = S
        self._chol = cholesky(S)
        self._chol.setflags(write=False)

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def chol(self):
        return self._chol

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.real(np.diag(self._chol)))))

    def inv(self):
        Linv = np.linalg.inv(self._chol)
        return SPDMatrix(hermitian_transpose(Linv) @ Linv)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __repr__(self):
        return f"SPDMatrix({self.entries!r})"


def cholesky(S):
    """Lower Cholesky factor of an SPD matrix (or a stack of them).

    Raises NotPositiveDefinite if any squared pivot falls below
    ``PIVOT_TOL * trace(S)``.
    """
    if isinstance(S, SPDMatrix):
        return S.chol
    S = symmetrize(S)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    piv = np.real(np.diagonal(L, axis1=-2, axis2=-1)) ** 2
    tr = np.real(trace(S))
    if np.any(~np.isfinite(L)) or np.any(piv <= PIVOT_TOL * tr[..., None]):
        raise NotPositiveDefinite("pivot below tolerance; matrix left the SPD cone")
    return L


def sym_eigs(S):
    """Ascending eigenvalues and orthonormal eigenvectors of a symmetric matrix."""
    S = symmetrize(S.entries if isinstance(S, SPDMatrix) else S)
    try:
        w, U = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from None
    return w, U


def eigvalsh(S):
    try:
        return np.linalg.eigvalsh(symmetrize(S))
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from None


def min_leading_minor(S):
    """Smallest leading principal minor of each matrix in a stack (Sylvester test)."""
    S = np.real(np.asarray(S)) if not np.iscomplexobj(S) else np.asarray(S)
    r = S.shape[-1]
    out = np.real(S[..., 0, 0]).copy()
    for k in range(2, r + 1):
        out = np.minimum(out, np.real(np.linalg.det(S[..., :k, :k])))
    return out


def spd_inverse(S):
    """Inverse of a stack of SPD matrices, symmetrized."""
    return symmetrize(np.linalg.inv(S))


# ---------------------------------------------------------------------------
# matrix exponential

_PADE6 = (1.0, 1.0 / 2, 5.0 / 44, 1.0 / 66, 1.0 / 792, 1.0 / 15840, 1.0 / 665280)
_THETA6 = 0.5


def expm_pade(X):
    """Scaling-and-squaring matrix exponential with a fixed (6,6) Padé approximant.

    One scaling exponent is used for the whole stack (the largest 1-norm
    decides), which keeps the computation vectorized; extra squarings of
    small-norm members cost accuracy only at round-off level.
    """
    X = np.asarray(X)
    if X.shape[-1] == 1:
        return np.exp(X)
    norm = np.max(np.sum(np.abs(X), axis=-2), axis=-1)
    nmax = float(np.max(norm)) if norm.size else 0.0
    s = int(np.ceil(np.log2(nmax / _THETA6))) if nmax > _THETA6 else 0
    Xs = X / (2.0 ** s)
    b = _PADE6
    I = eye_like(Xs)
    X2 = Xs @ Xs
    X4 = X2 @ X2
    X6 = X4 @ X2
    U = Xs @ (b[1] * I + b[3] * X2 + b[5] * X4)
    V = b[0] * I + b[2] * X2 + b[4] * X4 + b[6] * X6
    E = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        E = E @ E
    return E


def _expm_2x2(X):
    # exp(X) = e^m (cosh(s) I + sinh(s)/s N), N = X - mI, N^2 = q I, s = sqrt(q)
    a, b = X[..., 0, 0], X[..., 0, 1]
    c, d = X[..., 1, 0], X[..., 1, 1]
    m = 0.5 * (a + d)
    q = (0.5 * (a - d)) ** 2 + b * c
    if np.iscomplexobj(X):
        s = np.sqrt(q)
        ch = np.cosh(s)
        small = np.abs(s) < 1e-4
        s_safe = np.where(small, 1.0, s)
        sh = np.where(small, 1.0 + q / 6.0, np.sinh(s_safe) / s_safe)
    else:
        s = np.sqrt(np.abs(q))
        pos = q >= 0
        ch = np.where(pos, np.cosh(s), np.cos(s))
        small = s < 1e-4
        s_safe = np.where(small, 1.0, s)
        sh = np.where(small, 1.0 + q / 6.0,
                      np.where(pos, np.sinh(s_safe), np.sin(s_safe)) / s_safe)
    em = np.exp(m)
    out = np.empty_like(X)
    out[..., 0, 0] = em * (ch + sh * (a - m))
    out[..., 1, 1] = em * (ch + sh * (d - m))
    out[..., 0, 1] = em * sh * b
    out[..., 1, 0] = em * sh * c
    return out


def expm(X):
    """Matrix exponential of a stack of small square matrices.

    r = 1 and r = 2 use exact closed forms; larger sizes use ``expm_pade``.
    """
    X = np.asarray(X)
    if not np.issubdtype(X.dtype, np.inexact):
        X = X.astype(float)
    r = X.shape[-1]
    if r == 1:
        return np.exp(X)
    if r == 2:
        return _expm_2x2(X)
    return expm_pade(X)


# ---------------------------------------------------------------------------
# Brownian increments

@dataclass(frozen=True)
class NoiseSpec:
    """Law of a matrix Brownian increment.

    isotropic: every entry an independent real (beta=1) or complex (beta=2)
    Brownian motion with mean-square t.
    structured: off-diagonal entries as above, diagonal entries real with
    mean-square t/beta.
    """

    r: int
    beta: int = 1
    structure: str = "isotropic"

    def __post_init__(self):
        if int(self.r) < 1:
            raise ValueError("dimension must be positive")
        if self.beta not in (1, 2):
            raise ValueError("matrix-level noise supports beta in {1, 2}")
        if self.structure not in ("isotropic", "structured"):
            raise ValueError("structure must be 'isotropic' or 'structured'")

    @property
    def complex(self):
        return self.beta == 2

    @property
    def dtype(self):
        return np.complex128 if self.complex else np.float64


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream identified by (seed, stream_id, counter).

    ``counter`` selects an independent substream of the same path (for
    example the negative-time noise of a two-sided path).
    """

    seed: int
    stream_id: int = 0
    counter: int = 0

    def generator(self):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), int(self.counter)))
        return np.random.Generator(np.random.Philox(ss))


def _as_generator(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _draw_increments(spec, h, gen, lead=()):
    """Increments of shape lead + (r, r) from a single generator."""
    r = spec.r
    if not spec.complex:
        dB = gen.standard_normal(tuple(lead) + (r, r)) * np.sqrt(h)
        return dB
    z = gen.standard_normal(tuple(lead) + (r, r, 2)) * np.sqrt(h / 2.0)
    dB = z[..., 0] + 1j * z[..., 1]
    if spec.structure == "structured":
        # real diagonal with mean-square h/beta
        idx = np.arange(r)
        dB[..., idx, idx] = z[..., idx, idx, 0] * np.sqrt(2.0 / spec.beta)
    return dB


def bm_increment(spec, h, rng):
    """A single matrix Brownian increment over a step of length h."""
    if h <= 0:
        raise ValueError("time step must be positive")
    return _draw_increments(spec, h, _as_generator(rng))


class StreamBank:
    """One generator per Monte Carlo path; draws are stacked along axis 0.

    Path i uses ``RngStream(seed, offset + i, counter)``; each path consumes its
    own stream sequentially, so chunking in time or batching across paths does
    not change any path's samples.
    """

    def __init__(self, seed, n_paths, offset=0, counter=0):
        self.seed = int(seed)
        self.offset = int(offset)
        self.counter = int(counter)
        self.gens = [RngStream(seed, offset + i, counter).generator() for i in range(n_paths)]

    @property
    def n_paths(self):
        return len(self.gens)

    def increments(self, spec, h, n_steps):
        return np.stack([_draw_increments(spec, h, g, (n_steps,)) for g in self.gens])

    def normal(self, shape=()):
        return np.stack([g.standard_normal(shape) for g in self.gens])

    def uniform(self, shape=()):
        return np.stack([g.random(shape) for g in self.gens])


def chunk_steps(n_paths, r, complex_=False, budget=4_000_000):
    """Number of time steps per noise chunk keeping memory near ``budget`` doubles."""
    per = n_paths * r * r * (2 if complex_ else 1)
    return max(1, budget // max(per, 1))
