"""Time stepping of Brownian motion on GL(r) and of the matrix SDEs built from it.

Every simulator advances a whole batch of independent paths at once.  Arrays
carry the path index first: a MatrixPath stores ``values`` of shape
``(n_paths, n_times, r, r)``.

Conventions
-----------
M solves dM = M dB + a M dt with Itô drift a = 1/beta - 1/2 + s*mu for
isotropic noise (a = 1/2 + s*mu in the real case) and a = 1/(2 beta) + s*mu
for structured noise, where s = +1 or -1 is ``drift_sign``.  The exponential
scheme multiplies by exp(dB + s*mu*h*I); its Itô correction is exactly the
missing 1/beta - 1/2 (resp. 1/(2 beta)), so in every case the exponent drift is
just s*mu.
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConeExit, HorizonTooShort, OrderViolation, SingularStep
from .matcore import (
    NoiseSpec,
    RngStream,
    StreamBank,
    chunk_steps,
    expm,
    hermitian_transpose,
    min_leading_minor,
    spd_inverse,
    symmetrize,
    trace,
)

DEFAULT_TAIL_TOL = 1e-4


@dataclass(frozen=True)
class FlowParams:
    r: int
    mu: float
    drift_sign: int = 1
    beta: int = 1
    structure: str = "isotropic"
    T: float = 1.0
    dt: float = 1e-3
    scheme: str = "exponential"

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= self.dt * (1 - 1e-9):
            raise ValueError("T must be at least dt")
        if self.drift_sign not in (1, -1):
            raise ValueError("drift_sign must be +1 or -1")
        if self.scheme not in ("euler", "exponential"):
            raise ValueError("scheme must be 'euler' or 'exponential'")
        NoiseSpec(self.r, self.beta, self.structure)

    @property
    def noise(self):
        return NoiseSpec(self.r, self.beta, self.structure)

    @property
    def n_steps(self):
        return max(1, int(round(self.T / self.dt)))

    @property
    def h(self):
        # uniform step that lands exactly on T
        return self.T / self.n_steps

    @property
    def signed_mu(self):
        return self.drift_sign * self.mu

    @property
    def ito_drift(self):
        if self.structure == "structured":
            return 1.0 / (2 * self.beta) + self.signed_mu
        return 1.0 / self.beta - 0.5 + self.signed_mu

    def convergent(self):
        return 2 * self.mu > self.r - 1

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class MatrixPath:
    """Batch of matrix-valued paths on a common time grid.

    ``increments[:, k]`` (optional) is the multiplicative increment
    values[:, k]^{-1} values[:, k+1], accumulated directly from the step
    factors so that it stays accurate when the values are ill-conditioned.
    ``noise`` (optional) is the cumulative driving Brownian motion.
    """

    times: np.ndarray
    values: np.ndarray
    increments: np.ndarray = None
    noise: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def r(self):
        return self.values.shape[-1]

    def index(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not on the grid")
        return k

    def at(self, t):
        return self.values[:, self.index(t)]


@dataclass
class SPDPath:
    times: np.ndarray
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def r(self):
        return self.values.shape[-1]

    def index(self, t):
        return MatrixPath.index(self, t)

    def at(self, t):
        return self.values[:, self.index(t)]


def _seed_of(rng):
    """Normalize an rng argument to (seed, stream offset, counter)."""
    if isinstance(rng, RngStream):
        return rng.seed, rng.stream_id, rng.counter
    if isinstance(rng, tuple):
        return tuple(int(v) for v in rng) + (0,) * (3 - len(rng))
    return int(rng), 0, 0


def _record_steps(n_steps, h, record_every=None, record_times=None):
    if record_times is not None:
        ks = np.unique(np.round(np.asarray(record_times, float) / h).astype(int))
        if np.any(ks < 0) or np.any(ks > n_steps):
            raise ValueError("record times outside [0, T]")
        return np.union1d(ks, [0])
    every = int(record_every or 1)
    ks = np.arange(0, n_steps + 1, every)
    if ks[-1] != n_steps:
        ks = np.append(ks, n_steps)
    return ks


def _step_factors(params, dB, h, inverse=False):
    """Multiplicative step factors for a chunk of increments of shape (n, k, r, r)."""
    r = params.r
    if params.scheme == "exponential":
        s = -1.0 if inverse else 1.0
        F = expm(s * dB)
        F *= np.exp(s * params.signed_mu * h)
        return F
    F = dB + np.eye(r) * (1.0 + params.ito_drift * h)
    det = np.linalg.det(F)
    if np.any(np.real(det) <= 0) or np.any(~np.isfinite(det)):
        raise SingularStep("Euler step factor lost orientation; reduce dt")
    return np.linalg.inv(F) if inverse else F


def _run(params, n_paths, seed, offset, counter, n_steps, record, *, inverse=False,
         accumulate=False, store_increments=False, store_noise=False, dB=None, M0=None):
    """Advance M over n_steps and record at the step indices in ``record``."""
    r, h = params.r, params.h
    spec = params.noise
    dtype = spec.dtype
    bank = None if dB is not None else StreamBank(seed, n_paths, offset, counter)
    rec = {int(k): i for i, k in enumerate(record)}
    n_rec = len(record)
    M = np.broadcast_to(np.eye(r, dtype=dtype), (n_paths, r, r)).copy() if M0 is None else np.array(M0, dtype=dtype)
    out = {"M": np.empty((n_paths, n_rec, r, r), dtype)}
    out["M"][:, rec[0]] = M
    if accumulate:
        A = np.zeros((n_paths, r, r), dtype)
        Y = M @ hermitian_transpose(M)
        out["A"] = np.empty((n_paths, n_rec, r, r), dtype)
        out["A"][:, rec[0]] = A
    if store_increments:
        P = np.broadcast_to(np.eye(r, dtype=dtype), (n_paths, r, r)).copy()
        out["inc"] = np.empty((n_paths, n_rec - 1, r, r), dtype)
    if store_noise:
        Bc = np.zeros((n_paths, r, r), dtype)
        out["B"] = np.empty((n_paths, n_rec, r, r), dtype)
        out["B"][:, rec[0]] = Bc
    chunk = chunk_steps(n_paths, r, spec.complex)
    k = 0
    while k < n_steps:
        m = min(chunk, n_steps - k)
        inc = dB[:, k:k + m] if dB is not None else bank.increments(spec, h, m)
        F = _step_factors(params, inc, h, inverse)
        for j in range(m):
            M = M @ F[:, j]
            if accumulate:
                Y_new = M @ hermitian_transpose(M)
                A = A + 0.5 * h * (Y + Y_new)
                Y = Y_new
            if store_increments:
                P = P @ F[:, j]
            if store_noise:
                Bc = Bc + inc[:, j]
            i = rec.get(k + j + 1)
            if i is not None:
                out["M"][:, i] = M
                if accumulate:
                    out["A"][:, i] = A
                if store_increments:
                    out["inc"][:, i - 1] = P
                    P = np.broadcast_to(np.eye(r, dtype=dtype), (n_paths, r, r)).copy()
                if store_noise:
                    out["B"][:, i] = Bc
        k += m
    return out


def _batched(fn, n_paths, threads):
    """Run fn(n, offset) on path batches, optionally in a thread pool, and concatenate."""
    threads = max(1, int(threads or 1))
    if threads == 1 or n_paths < 2 * threads:
        return fn(n_paths, 0)
    sizes = [n_paths // threads + (i < n_paths % threads) for i in range(threads)]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    with ThreadPoolExecutor(threads) as ex:
        parts = list(ex.map(lambda a: fn(*a), zip(sizes, offsets)))
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


def simulate(params, rng, n_paths=1, *, record_every=None, record_times=None, accumulate=True,
             store_increments=False, store_noise=False, dB=None, threads=1):
    """Fused simulation of M and A_t = int_0^t M M^H ds on the fine grid.

    Returns (MatrixPath M, SPDPath A or None).  Only the requested grid points
    are stored; the quadrature for A always runs at the simulation step.
    """
    seed, offset, counter = _seed_of(rng)
    n, h = params.n_steps, params.h
    record = _record_steps(n, h, record_every, record_times)
    if dB is not None:
        dB = np.asarray(dB)
        n_paths = dB.shape[0]

    def job(m, off):
        sub = None if dB is None else dB[off:off + m]
        return _run(params, m, seed, offset + off, counter, n, record, accumulate=accumulate,
                    store_increments=store_increments, store_noise=store_noise, dB=sub)

    out = _batched(job, n_paths, 1 if dB is not None else threads)
    times = record * h
    prov = {"seed": seed, "offset": offset, "counter": counter, "params": params}
    M = MatrixPath(times, out["M"], out.get("inc"), out.get("B"), prov)
    A = SPDPath(times, out["A"], prov) if accumulate else None
    return M, A


def evolve_M(params, rng, n_paths=1, *, record_every=None, record_times=None,
             store_increments=False, store_noise=False, dB=None, threads=1):
    """Simulate M_t^{(±mu)} from M_0 = I (no additive functional)."""
    M, _ = simulate(params, rng, n_paths, record_every=record_every, record_times=record_times,
                    accumulate=False, store_increments=store_increments, store_noise=store_noise,
                    dB=dB, threads=threads)
    return M


def accumulate_A(path):
    """Trapezoidal A_t = int_0^t M_s M_s^H ds on the stored (uniform) grid."""
    t = path.times
    if len(t) > 2 and not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-9, atol=1e-12):
        raise ValueError("accumulate_A needs a uniform grid")
    k0 = int(np.argmin(np.abs(t)))
    V = path.values
    Y = V @ hermitian_transpose(V)
    dt = np.diff(t)[None, :, None, None]
    inc = 0.5 * dt * (Y[:, 1:] + Y[:, :-1])
    A = np.zeros_like(Y)
    A[:, 1:] = np.cumsum(inc, axis=1)
    A -= A[:, k0:k0 + 1]
    return SPDPath(t.copy(), A, dict(path.provenance))


def tail_rate(r, mu):
    """Decay rate used to size truncation horizons for int_0^inf M^{(-mu)} M^{(-mu)T}.

    The expected tail decays like exp(-(2mu - r - 1) t) when 2mu > r + 1 (first
    moment of A_inf finite); otherwise only the almost-sure rate
    2mu - r + 1 of |M_t|^2 is available.
    """
    if 2 * mu > r + 1:
        return 2 * mu - r - 1
    return 2 * mu - r + 1


def horizon_for(r, mu, tail_tol=DEFAULT_TAIL_TOL):
    if not 2 * mu > r - 1:
        raise ValueError("int_0^inf M M^T diverges unless 2 mu > r - 1")
    return float(np.log(1.0 / tail_tol) / tail_rate(r, mu))


def check_horizon(r, mu, T, tail_tol):
    rate = tail_rate(r, mu)
    if np.exp(-rate * T) >= tail_tol:
        raise HorizonTooShort(
            f"horizon {T:g} gives tail bound {np.exp(-rate * T):.2e} >= {tail_tol:g}; "
            f"need at least {horizon_for(r, mu, tail_tol):.3g}")


def sample_A_infinity(params, T_max=None, tail_tol=DEFAULT_TAIL_TOL, rng=0, n_paths=1, threads=1):
    """Samples of A_inf = int_0^inf M^{(-mu)} M^{(-mu)H} ds truncated at T_max.

    Returns an array of shape (n_paths, r, r).  The drift sign of ``params`` is
    forced to -1.
    """
    if not params.convergent():
        raise ValueError(f"A_inf requires 2 mu > r - 1 (got mu={params.mu}, r={params.r})")
    if T_max is None:
        T_max = horizon_for(params.r, params.mu, tail_tol)
    check_horizon(params.r, params.mu, T_max, tail_tol)
    p = params.with_(drift_sign=-1, T=max(T_max, params.dt))
    _, A = simulate(p, rng, n_paths, record_times=[p.T], threads=threads)
    return symmetrize(A.values[:, -1])


# ---------------------------------------------------------------------------
# two-sided paths

def extend_two_sided(params, T_neg, rng, n_paths=1, *, record_every=None, accumulate=False, threads=1):
    """Two-sided M on [-T_neg, T] with M_0 = I.

    Negative times use fresh noise (substream counter+1) and the backward
    recursion M_{s-h} = M_s F^{-1}, so that M_s^{-1} M_t is a fresh M-path for
    every s < t.  With ``accumulate`` the returned SPDPath holds
    int_0^t M M^H ds (negative for t < 0 in the sense of orientation, i.e. it
    stores -int_t^0).
    """
    if not T_neg > 0:
        raise ValueError("T_neg must be positive")
    seed, offset, counter = _seed_of(rng)
    h = params.h
    n_neg = max(1, int(round(T_neg / h)))
    n_pos = params.n_steps
    rec_pos = _record_steps(n_pos, h, record_every)
    rec_neg = _record_steps(n_neg, h, record_every)

    def job(m, off):
        fw = _run(params, m, seed, offset + off, counter, n_pos, rec_pos, accumulate=accumulate)
        bw = _run(params, m, seed, offset + off, counter + 1, n_neg, rec_neg, inverse=True,
                  accumulate=accumulate)
        res = {"M": np.concatenate([bw["M"][:, :0:-1], fw["M"]], axis=1)}
        if accumulate:
            res["A"] = np.concatenate([-bw["A"][:, :0:-1], fw["A"]], axis=1)
        return res

    out = _batched(job, n_paths, threads)
    times = np.concatenate([-rec_neg[:0:-1] * h, rec_pos * h])
    prov = {"seed": seed, "offset": offset, "counter": counter, "params": params, "T_neg": n_neg * h}
    M = MatrixPath(times, out["M"], provenance=prov)
    if accumulate:
        return M, SPDPath(times, out["A"], prov)
    return M


def time_reverse(path):
    """N_t = M_{-t} on the reflected grid."""
    return MatrixPath(-path.times[::-1], path.values[:, ::-1].copy(),
                      provenance=dict(path.provenance, reversed=not path.provenance.get("reversed", False)))


# ---------------------------------------------------------------------------
# SPD-valued diffusions

def _spd_euler(S0, coef, diag_coef, params, seed, offset, counter, record, n_paths,
               M_track=False, floor=1e-12, max_exit_frac=0.01):
    """Euler scheme for dS = (I + coef S + diag_coef diag(S) + tr(S) I) dt - dB S - S dB^H.

    Optionally advances M (exponential scheme) on the same increments.
    Steps that leave the cone are projected by clamping eigenvalues at
    floor * tr(S).
    """
    r, h = params.r, params.h
    spec = params.noise
    dtype = spec.dtype
    bank = StreamBank(seed, n_paths, offset, counter)
    S = np.array(np.broadcast_to(S0, (n_paths, r, r)), dtype=dtype)
    I = np.eye(r, dtype=dtype)
    rec = {int(k): i for i, k in enumerate(record)}
    out = {"S": np.empty((n_paths, len(record), r, r), dtype)}
    out["S"][:, rec[0]] = S
    if M_track:
        M = np.broadcast_to(I, (n_paths, r, r)).copy()
        out["M"] = np.empty_like(out["S"])
        out["M"][:, rec[0]] = M
    exits = 0
    n_steps = params.n_steps
    chunk = chunk_steps(n_paths, r, spec.complex)
    k = 0
    while k < n_steps:
        m = min(chunk, n_steps - k)
        inc = bank.increments(spec, h, m)
        if M_track:
            F = _step_factors(params, inc, h)
        for j in range(m):
            dB = inc[:, j]
            tr = np.real(trace(S))
            drift = I + coef * S + tr[:, None, None] * I
            if diag_coef:
                drift = drift + diag_coef * (S * I)
            noise = dB @ S
            S = S + h * drift - noise - hermitian_transpose(noise)
            S = symmetrize(S)
            bad = min_leading_minor(S) <= 0
            if np.any(bad):
                exits += int(np.count_nonzero(bad))
                w, U = np.linalg.eigh(S[bad])
                trb = np.sum(np.abs(w), axis=-1, keepdims=True)
                w = np.maximum(w, floor * trb)
                S[bad] = (U * w[..., None, :]) @ hermitian_transpose(U)
            if M_track:
                M = M @ F[:, j]
            i = rec.get(k + j + 1)
            if i is not None:
                out["S"][:, i] = S
                if M_track:
                    out["M"][:, i] = M
        k += m
        if exits > max_exit_frac * n_paths * max(k, 100):
            raise ConeExit(f"{exits} cone exits in {k} steps x {n_paths} paths; reduce dt")
    out["exits"] = np.array([exits])
    return out


def _q_coefficients(params, sign):
    b = params.beta
    s_mu = sign * params.mu
    if params.structure == "structured":
        return 1.0 / b - 2 * s_mu, 1.0 / b - 1.0
    return 2.0 / b - 1.0 - 2 * s_mu, 0.0


def evolve_Q(Q0, params, rng, n_paths=1, *, record_every=None, record_times=None):
    """Euler scheme for dQ = I dt + (1 - 2mu) Q dt + tr(Q) I dt - dB Q - Q dB^T.

    Complex (beta=2) and structured noise use the corresponding generalizations
    (drift (2/beta - 1 - 2mu) Q, resp. (1/beta - 2mu) Q + (1/beta - 1) diag Q).
    ``Q0`` may be one matrix or one per path.  The stationary law is the
    inverse Wishart law with 2mu degrees of freedom.
    """
    seed, offset, counter = _seed_of(rng)
    Q0 = np.asarray(Q0)
    if Q0.ndim == 3:
        n_paths = Q0.shape[0]
    record = _record_steps(params.n_steps, params.h, record_every, record_times)
    coef, dcoef = _q_coefficients(params, +1)
    out = _spd_euler(Q0, coef, dcoef, params, seed, offset, counter, record, n_paths)
    prov = {"seed": seed, "params": params, "cone_exits": int(out["exits"][0])}
    return SPDPath(record * params.h, out["S"], prov)


def evolve_X(params, rng, n_paths=1, *, record_every=None, record_times=None, X0=None):
    """X_t = M_t^{-1} A_t M_t^{-H} integrated as an SDE on the same increments as M.

    For M with Itô drift 1/2 + s mu the SDE reads
    dX = I dt + (1 - 2 s mu) X dt + tr(X) I dt - dB X - X dB^T.
    Returns (MatrixPath M, SPDPath X).  M uses the exponential scheme with the
    same increments (and therefore the same stream) as ``simulate``.
    """
    seed, offset, counter = _seed_of(rng)
    record = _record_steps(params.n_steps, params.h, record_every, record_times)
    coef, dcoef = _q_coefficients(params, params.drift_sign)
    X0 = np.zeros((params.r, params.r)) if X0 is None else X0
    out = _spd_euler(X0, coef, dcoef, params, seed, offset, counter, record, n_paths, M_track=True)
    times = record * params.h
    prov = {"seed": seed, "params": params, "cone_exits": int(out["exits"][0])}
    return MatrixPath(times, out["M"], provenance=prov), SPDPath(times, out["S"], prov)


def construct_Z(M, A):
    """Z_t = M_t^{-1} A_t on the shared grid."""
    if M.values.shape != A.values.shape or not np.allclose(M.times, A.times):
        raise ValueError("M and A must share the grid")
    Z = np.linalg.solve(M.values, A.values)
    return MatrixPath(M.times.copy(), Z, provenance=dict(M.provenance, kind="Z"))


def conjugated_X(M, A):
    """M_t^{-1} A_t M_t^{-H} from stored M and A."""
    Minv = np.linalg.inv(M.values)
    return SPDPath(M.times.copy(), symmetrize(Minv @ A.values @ hermitian_transpose(Minv)))


# ---------------------------------------------------------------------------
# constructions with the total integral A_inf

def enlargement_N(M, A, A_inf):
    """N_t = A_inf (A_inf - A_t)^{-1} M_t for M of drift -mu.

    ``A_inf`` has shape (n_paths, r, r).  The difference A_inf - A_t must stay
    positive definite on the grid (otherwise the horizon used for A_inf was
    too short).
    """
    D = symmetrize(A_inf[:, None] - A.values)
    k = M.times > 0
    if np.any(min_leading_minor(D[:, k]) <= 0):
        raise OrderViolation("A_inf - A_t lost positivity; horizon too short")
    N = A_inf[:, None] @ np.linalg.solve(D, M.values)
    return MatrixPath(M.times.copy(), N, provenance=dict(M.provenance, kind="N"))


def inverse_difference(A_t, A_inf):
    """(A_t^{-1} - A_inf^{-1}) computed as (A_t + A_t (A_inf - A_t)^{-1} A_t)^{-1}.

    The second form avoids cancellation when A_inf - A_t is small.
    """
    D = symmetrize(A_inf - A_t)
    if np.any(min_leading_minor(D) <= 0):
        raise OrderViolation("A_inf - A_t lost positivity")
    inner = A_t + A_t @ np.linalg.solve(D, A_t)
    return spd_inverse(symmetrize(inner))


def bhat_path(params, rng, n_paths=1, *, T_tail=None, tail_tol=DEFAULT_TAIL_TOL, record_times=None):
    """B_t - int_0^t (2 mu I - M_s^T (A_inf - A_s)^{-1} M_s) ds for M of drift -mu.

    Two passes over identical noise: the first computes A_inf (truncated), the
    second integrates the compensator on the fine grid.  Returns a MatrixPath
    of B-hat on the record grid.
    """
    p = params.with_(drift_sign=-1)
    if T_tail is None:
        T_tail = horizon_for(p.r, p.mu, tail_tol)
    n_t = int(round(p.T / p.dt))
    n_tail = int(np.ceil(T_tail / p.dt))
    T_total = (n_t + n_tail) * p.dt
    full = p.with_(T=T_total)
    _, A = simulate(full, rng, n_paths, record_times=[T_total])
    A_inf = A.values[:, -1]
    seed, offset, counter = _seed_of(rng)
    h = full.h
    n = n_t
    record = _record_steps(n, h, None, record_times if record_times is not None else [p.T])
    rec = {int(k): i for i, k in enumerate(record)}
    r = p.r
    bank = StreamBank(seed, n_paths, offset, counter)
    M = np.broadcast_to(np.eye(r), (n_paths, r, r)).copy()
    Acur = np.zeros((n_paths, r, r))
    Bhat = np.zeros((n_paths, r, r))
    out = np.zeros((n_paths, len(record), r, r))

    def integrand(M, Acur):
        D = symmetrize(A_inf - Acur)
        return 2 * p.mu * np.eye(r) - np.swapaxes(M, -1, -2) @ np.linalg.solve(D, M)

    g_old = integrand(M, Acur)
    Y = M @ np.swapaxes(M, -1, -2)
    chunk = chunk_steps(n_paths, r)
    k = 0
    while k < n:
        m = min(chunk, n - k)
        inc = bank.increments(full.noise, h, m)
        F = _step_factors(full, inc, h)
        for j in range(m):
            M = M @ F[:, j]
            Ynew = M @ np.swapaxes(M, -1, -2)
            Acur = Acur + 0.5 * h * (Y + Ynew)
            Y = Ynew
            g_new = integrand(M, Acur)
            Bhat = Bhat + inc[:, j] - 0.5 * h * (g_old + g_new)
            g_old = g_new
            i = rec.get(k + j + 1)
            if i is not None:
                out[:, i] = Bhat
        k += m
    return MatrixPath(record * h, out, provenance={"seed": seed, "params": p, "T_tail": T_tail})


def _two_sided_Q0(params, T_neg, seed, offset, counter, n_paths):
    """int_{-T_neg}^0 M M^H ds for the negative half of a two-sided path."""
    neg = params.with_(T=T_neg)
    out = _run(neg, n_paths, seed, offset, counter + 1, neg.n_steps, np.array([0, neg.n_steps]),
               inverse=True, accumulate=True)
    return symmetrize(out["A"][:, -1])


def burke_oioo_path(params, rng, n_paths=1, *, T_neg=None, tail_tol=DEFAULT_TAIL_TOL, record_times=None):
    """Left side of the one-in-one-out identity and an independent reference M.

    lhs_t = (int_{-inf}^0 M M^T)^{-1} M_t (int_{-inf}^t M_t^{-1} M_s M_s^T M_t^{-T} ds)
          = (I + Q_0^{-1} A_t) M_t^{-T},  Q_0 = int_{-inf}^0 M M^T,
    for the two-sided M of drift +mu.  The reference is M^{(+mu)} on fresh
    streams (counter + 2).
    """
    p = params.with_(drift_sign=1)
    if not p.convergent():
        raise ValueError("requires 2 mu > r - 1")
    if T_neg is None:
        T_neg = horizon_for(p.r, p.mu, tail_tol)
    check_horizon(p.r, p.mu, T_neg, tail_tol)
    seed, offset, counter = _seed_of(rng)
    Q0 = _two_sided_Q0(p, T_neg, seed, offset, counter, n_paths)
    M, A = simulate(p, (seed, offset, counter), n_paths, record_times=record_times)
    lhs = (np.eye(p.r) + np.linalg.solve(Q0[:, None], A.values)) @ np.linalg.inv(
        hermitian_transpose(M.values))
    ref = evolve_M(p, (seed, offset, counter + 2), n_paths, record_times=record_times)
    prov = {"seed": seed, "params": p, "T_neg": T_neg}
    return MatrixPath(M.times.copy(), lhs, provenance=prov), ref


def burke_F_G(params, rng, n_paths=1, *, T_neg=None, tail_tol=DEFAULT_TAIL_TOL, record_times=None,
              compensate=True):
    """F_t = B_t + 2 mu I t - 1/2 int_0^t H^T A_{(-inf,s)}^{-1} H ds and G likewise with C.

    H solves dH = H (dB + dC) + (2mu + 1) H dt (exponential scheme with
    exponent drift 2mu) and is extended to negative times; A_{(-inf,s)} is
    int_{-inf}^s H H^T.  With ``compensate=False`` the +2 mu I t term is
    omitted (negative control).
    """
    p = params.with_(drift_sign=1)
    if not p.convergent():
        raise ValueError("requires 2 mu > r - 1")
    r, mu, h = p.r, p.mu, p.h
    if T_neg is None:
        # H_{t/2} has the law of M_t, so the two-sided integral decays twice as fast
        T_neg = horizon_for(r, mu, tail_tol) / 2
    check_horizon(r, mu, 2 * T_neg, tail_tol)
    seed, offset, counter = _seed_of(rng)
    # negative half: H_{-u} built from fresh B+C increments (variance 2h per entry)
    hp = p.with_(T=T_neg, dt=p.dt)
    nb = StreamBank(seed, n_paths, offset, counter + 3)
    H = np.broadcast_to(np.eye(r), (n_paths, r, r)).copy()
    Y = H @ H.transpose(0, 2, 1)
    Aneg = np.zeros((n_paths, r, r))
    k, n_neg = 0, hp.n_steps
    chunk = chunk_steps(n_paths, r)
    hn = hp.h
    while k < n_neg:
        m = min(chunk, n_neg - k)
        inc = nb.increments(p.noise, 2 * hn, m)
        F = expm(-inc) * np.exp(-2 * mu * hn)
        for j in range(m):
            H = H @ F[:, j]
            Yn = H @ H.transpose(0, 2, 1)
            Aneg = Aneg + 0.5 * hn * (Y + Yn)
            Y = Yn
        k += m
    # positive half
    n = p.n_steps
    record = _record_steps(n, h, None, record_times if record_times is not None else [p.T])
    rec = {int(kk): i for i, kk in enumerate(record)}
    bB = StreamBank(seed, n_paths, offset, counter)
    bC = StreamBank(seed, n_paths, offset, counter + 1)
    H = np.broadcast_to(np.eye(r), (n_paths, r, r)).copy()
    A = symmetrize(Aneg)
    Y = H @ H.transpose(0, 2, 1)
    comp = 2 * mu if compensate else 0.0

    def g(H, A):
        return H.transpose(0, 2, 1) @ np.linalg.solve(A, H)

    g_old = g(H, A)
    Fp = np.zeros((n_paths, r, r))
    Gp = np.zeros((n_paths, r, r))
    outF = np.zeros((n_paths, len(record), r, r))
    outG = np.zeros_like(outF)
    k = 0
    while k < n:
        m = min(chunk, n - k)
        dB = bB.increments(p.noise, h, m)
        dC = bC.increments(p.noise, h, m)
        Fac = expm(dB + dC) * np.exp(2 * mu * h)
        for j in range(m):
            H = H @ Fac[:, j]
            Yn = H @ H.transpose(0, 2, 1)
            A = A + 0.5 * h * (Y + Yn)
            Y = Yn
            g_new = g(H, A)
            comp_inc = 0.25 * h * (g_old + g_new)
            g_old = g_new
            Fp = Fp + dB[:, j] + comp * h * np.eye(r) - comp_inc
            Gp = Gp + dC[:, j] + comp * h * np.eye(r) - comp_inc
            i = rec.get(k + j + 1)
            if i is not None:
                outF[:, i] = Fp
                outG[:, i] = Gp
        k += m
    prov = {"seed": seed, "params": p, "T_neg": T_neg, "compensate": compensate}
    times = record * h
    return MatrixPath(times, outF, provenance=prov), MatrixPath(times, outG, provenance=dict(prov))


# ---------------------------------------------------------------------------
# export

_SCALAR_TAG = {np.dtype(np.float64): 1, np.dtype(np.complex128): 2}


def path_to_csv(path, fh, index=0):
    """Write one path as CSV rows: time, then the row-major entries.

    Complex entries are written as real and imaginary columns.
    """
    r = path.r
    V = path.values[index]
    cols = ["t"]
    for i in range(r):
        for j in range(r):
            if np.iscomplexobj(V):
                cols += [f"re_{i}{j}", f"im_{i}{j}"]
            else:
                cols.append(f"m_{i}{j}")
    fh.write(",".join(cols) + "\n")
    for t, X in zip(path.times, V):
        flat = X.reshape(-1)
        if np.iscomplexobj(flat):
            flat = np.column_stack([flat.real, flat.imag]).reshape(-1)
        fh.write(",".join([repr(float(t))] + [repr(float(v)) for v in flat]) + "\n")


def write_snapshot(path, fh, index=0):
    """Binary snapshot of one path.

    Layout (little-endian): uint32 r, uint64 grid length n, uint32 scalar tag
    (1 real, 2 complex); then n doubles of times; then the values as row-major
    doubles of shape (n, r, r) for real paths or (n, r, r, 2) for complex paths
    (real, imaginary interleaved).
    """
    V = np.ascontiguousarray(path.values[index])
    tag = 2 if np.iscomplexobj(V) else 1
    fh.write(struct.pack("<IQI", path.r, len(path.times), tag))
    fh.write(np.asarray(path.times, "<f8").tobytes())
    if tag == 2:
        V = np.stack([V.real, V.imag], axis=-1)
    fh.write(np.asarray(V, "<f8").tobytes())


def read_snapshot(fh):
    r, n, tag = struct.unpack("<IQI", fh.read(16))
    times = np.frombuffer(fh.read(8 * n), "<f8").copy()
    count = n * r * r * (2 if tag == 2 else 1)
    V = np.frombuffer(fh.read(8 * count), "<f8").copy()
    if tag == 2:
        V = V.reshape(n, r, r, 2)
        V = V[..., 0] + 1j * V[..., 1]
    else:
        V = V.reshape(n, r, r)
    return MatrixPath(times, V[None])
