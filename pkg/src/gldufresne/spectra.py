"""Eigenvalue and singular-value diffusions, Lyapunov exponents and scaling limits.

The interacting SDEs are integrated in log coordinates l_i = log(value_i),
which keeps every value positive exactly; the pair interaction
(p_i + p_j)/(p_i - p_j) equals coth((l_i - l_j)/2).  Spectra are stored in
ascending order with shape (n_paths, n_times, r).

Log-coordinate forms (independent standard Brownian motions b_i):

    P (inverse eigenvalues of Q), any beta:
        dl_i = (2/sqrt(beta)) db_i + (-p_i + 2 mu + sum_j coth((l_i - l_j)/2)) dt
    X (eigenvalues of X or Q):
        dl_i = (2/sqrt(beta)) db_i + (e^{-l_i} - 2 mu + sum_j coth((l_i - l_j)/2)) dt
    Z (l_i = log of squared singular values, real case):
        dl_i = 2 db_i + (r - 1 - 2 mu + 2 a_i [kappa_mu(diag(a), I)]_ii
                         + sum_j (coth((l_i - l_j)/2) - 1)) dt,   a_i = e^{-l_i}
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .bessel import KappaTable, bessel_ratio
from .errors import CollisionOverflow, HorizonTooShort
from .flows import FlowParams, construct_Z, evolve_Q, evolve_X, simulate
from .matcore import StreamBank, eigvalsh

COLLISION_DELTA = 1e-8


@dataclass(frozen=True)
class EigParams:
    r: int
    mu: float
    beta: float = 1
    T: float = 1.0
    dt: float = 1e-3
    init: object = None

    def __post_init__(self):
        if not self.dt > 0 or not self.T >= self.dt * (1 - 1e-9):
            raise ValueError("need dt > 0 and T >= dt")
        if self.beta not in (1, 2, 4):
            raise ValueError("beta must be 1, 2 or 4")

    @property
    def n_steps(self):
        return max(1, int(round(self.T / self.dt)))

    @property
    def h(self):
        return self.T / self.n_steps


@dataclass
class SpectrumPath:
    times: np.ndarray
    values: np.ndarray
    events: dict = field(default_factory=dict)

    def at(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not on the grid")
        return self.values[:, k]


def _pair_coth(ell, delta=COLLISION_DELTA):
    """sum_{j != i} coth((l_i - l_j)/2) with |tanh| clamped at delta; also near-collision flags."""
    d = 0.5 * (ell[..., :, None] - ell[..., None, :])
    t = np.tanh(d)
    r = ell.shape[-1]
    off = ~np.eye(r, dtype=bool)
    near = np.any((np.abs(t) < delta) & off, axis=(-2, -1))
    t = np.where(np.abs(t) < delta, np.where(t < 0, -delta, delta), t)
    c = np.where(off, 1.0 / np.where(off, t, 1.0), 0.0)
    return c.sum(axis=-1), near


def _record(n_steps, h, record_every=None, record_times=None):
    if record_times is not None:
        ks = np.unique(np.round(np.asarray(record_times, float) / h).astype(int))
        return np.union1d(ks, [0])
    every = int(record_every or n_steps)
    ks = np.arange(0, n_steps + 1, every)
    return ks if ks[-1] == n_steps else np.append(ks, n_steps)


def _integrate(ell0, drift, sigma, h, n_steps, bank, record, max_event_frac=0.01,
               tau=0.1, max_depth=20):
    """Euler in log coordinates with the collision guard.

    Steps whose drift would move a coordinate by more than ``tau``, or in
    which two values are within the relative distance COLLISION_DELTA, are
    redone by repeated halving with Brownian-bridge splits of the increment
    (the bridge normals come from a generator keyed by path and step, so
    results do not depend on batching).  Crossings are undone by sorting.
    """
    n, r = ell0.shape
    ell = np.sort(ell0, axis=-1)
    rec = {int(k): i for i, k in enumerate(record)}
    out = np.empty((n, len(record), r))
    out[:, rec[0]] = np.exp(ell)
    events = {"near_collisions": 0, "refined_steps": 0, "reorders": 0}
    chunk = max(1, 2_000_000 // max(n * r, 1))
    k = 0
    sq = np.sqrt(h)

    def refine(e, hh, w, gen, depth):
        f, near = drift(e[None])
        f = f[0]
        events["near_collisions"] += int(near[0])
        if depth >= max_depth or (np.max(np.abs(f)) * hh <= tau and not near[0]):
            return np.sort(e + f * hh + sigma * w)
        w1 = 0.5 * w + 0.5 * np.sqrt(hh) * gen.standard_normal(r)
        e = refine(e, hh / 2, w1, gen, depth + 1)
        return refine(e, hh / 2, w - w1, gen, depth + 1)

    while k < n_steps:
        m = min(chunk, n_steps - k)
        z = bank.normal((m, r))
        for j in range(m):
            dW = sq * z[:, j]
            f, near = drift(ell)
            new = ell + f * h + sigma * dW
            bad = near | (np.max(np.abs(f), axis=-1) * h > tau)
            if np.any(bad):
                for b in np.flatnonzero(bad):
                    events["refined_steps"] += 1
                    gen = np.random.default_rng([bank.seed, bank.counter, 7919, bank.offset + int(b), k + j])
                    new[b] = refine(ell[b], h, dW[b], gen, 0)
            srt = np.sort(new, axis=-1)
            events["reorders"] += int(np.count_nonzero(np.any(srt != new, axis=-1)))
            ell = srt
            i = rec.get(k + j + 1)
            if i is not None:
                out[:, i] = np.exp(ell)
        k += m
        if events["near_collisions"] > max_event_frac * n * max(k, 100):
            raise CollisionOverflow(f"{events['near_collisions']} collision-guard events in {k} steps x {n} paths")
    return out, events


def _initial(init, n_paths, r):
    x = np.asarray(init, float)
    if x.ndim == 1:
        x = np.broadcast_to(x, (n_paths, r))
    if x.shape[-1] != r:
        raise ValueError("initial spectrum has wrong length")
    return np.sort(x, axis=-1)


def _degenerate(x):
    if np.any(x <= 0):
        return True
    if x.shape[-1] > 1:
        g = np.diff(x, axis=-1) / (x[..., 1:] + x[..., :-1])
        return bool(np.any(g < 1e-6))
    return False


def _seed(rng):
    if isinstance(rng, tuple):
        return tuple(int(v) for v in rng) + (0,) * (3 - len(rng))
    return int(rng), 0, 0


def _times(params, record):
    return record * params.h


def evolve_P_eigs(params, rng, n_paths=1, *, record_every=None, record_times=None, warm_t0=0.05):
    """Eigenvalues of P = Q^{-1} under the common beta SDE.

    dp_i = (-p_i^2 + (2 mu + 2/beta) p_i + p_i sum_j (p_i + p_j)/(p_i - p_j)) dt + (2/sqrt(beta)) p_i db_i.
    A degenerate initial spectrum (coincident values) is first moved off the
    diagonal by running the full-matrix Q SDE from diag(1/p) for ``warm_t0``
    (beta in {1, 2}); the returned grid then starts at ``warm_t0``.
    """
    seed, off, ctr = _seed(rng)
    r = params.r
    x0 = _initial(params.init, n_paths, r)
    t0 = 0.0
    if _degenerate(x0):
        if params.beta == 4:
            raise ValueError("beta = 4 needs a strictly ordered initial spectrum")
        fp = FlowParams(r, params.mu, beta=int(params.beta), T=warm_t0, dt=min(params.dt, warm_t0 / 10))
        Q0 = np.stack([np.diag(1.0 / v) for v in x0])
        Q = evolve_Q(Q0, fp, (seed, off, ctr + 7), record_times=[fp.T])
        x0 = 1.0 / eigvalsh(Q.values[:, -1])[:, ::-1]
        t0 = fp.T
    mu, sig = params.mu, 2 / np.sqrt(params.beta)

    def drift(ell):
        c, near = _pair_coth(ell)
        return -np.exp(ell) + 2 * mu + c, near

    record = _record(params.n_steps, params.h, record_every, record_times)
    bank = StreamBank(seed, n_paths, off, ctr)
    vals, ev = _integrate(np.log(x0), drift, sig, params.h, params.n_steps, bank, record)
    return SpectrumPath(t0 + _times(params, record), vals, ev)


def warm_start_X(r, mu, t0, rng, n_paths, dt=1e-3, beta=1):
    """Eigenvalues of the full-matrix X at time t0 (X_0 = 0), ascending."""
    fp = FlowParams(r, mu, beta=beta, T=t0, dt=min(dt, t0 / 10))
    _, X = evolve_X(fp, rng, n_paths, record_times=[fp.T])
    return np.clip(eigvalsh(X.values[:, -1]), 1e-300, None)


def evolve_X_eigs(params, rng, n_paths=1, *, record_every=None, record_times=None, warm_t0=0.05):
    """Eigenvalues of X_t = M_t^{-1} A_t M_t^{-T}.

    dx_i = (2/sqrt(beta)) x_i db_i + (1 + (2 - 2 mu) x_i + x_i sum_j (x_i + x_j)/(x_i - x_j)) dt
    (beta = 1 shown; the general beta drift is the image of the common P SDE
    under x = 1/p).  The entrance from x = 0 is handled by a full-matrix warm
    start to ``warm_t0``.
    """
    seed, off, ctr = _seed(rng)
    r = params.r
    init = np.zeros(r) if params.init is None else params.init
    x0 = _initial(init, n_paths, r)
    t0 = 0.0
    if _degenerate(x0):
        if np.any(x0 != 0):
            raise ValueError("degenerate X start must be the zero matrix")
        x0 = warm_start_X(r, params.mu, warm_t0, (seed, off, ctr + 7), n_paths, params.dt, int(params.beta))
        t0 = warm_t0
    mu, sig = params.mu, 2 / np.sqrt(params.beta)

    def drift(ell):
        c, near = _pair_coth(ell)
        return np.exp(-ell) - 2 * mu + c, near

    record = _record(params.n_steps, params.h, record_every, record_times)
    bank = StreamBank(seed, n_paths, off, ctr)
    vals, ev = _integrate(np.log(x0), drift, sig, params.h, params.n_steps, bank, record)
    return SpectrumPath(t0 + _times(params, record), vals, ev)


def warm_start_Z(r, mu, t0, rng, n_paths, dt=1e-3):
    """Singular values of Z_t0 = M_t0^{-1} A_t0 from the full-matrix simulation, ascending."""
    fp = FlowParams(r, mu, T=t0, dt=min(dt, t0 / 10))
    M, A = simulate(fp, rng, n_paths, record_times=[fp.T])
    Z = construct_Z(M, A).values[:, -1]
    return np.sort(np.linalg.svd(Z, compute_uv=False), axis=-1)


def kappa_source_for(r, mu, **table_kw):
    """Default drift handle: exact Bessel ratio at r = 1, a KappaTable at r = 2.

    The handle maps a of shape (n, r) to diag(kappa_mu(diag(a), I)) * a.
    """
    if r == 1:
        def src(a):
            return np.sqrt(a) * bessel_ratio(mu, np.sqrt(a))
        return src
    if r == 2:
        table = KappaTable(mu, **table_kw)

        def src(a):
            k1, k2 = table.diag(a[:, 0], a[:, 1])
            return np.stack([k1, k2], axis=-1) * a
        src.table = table
        return src
    raise ValueError("provide kappa_source for r > 2")


def evolve_Z_singvals(params, kappa_source=None, rng=0, n_paths=1, *, record_every=None,
                      record_times=None, warm_t0=0.05):
    """Singular values of Z_t = M_t^{-1} A_t (real case).

    dz_i = z_i db_i + ((r/2 - mu) z_i + [kappa_mu(Lambda_z, I)]_ii / z_i
                       + z_i sum_j z_j^2/(z_i^2 - z_j^2)) dt,  Lambda_z = diag(z^{-2}),
    integrated for log z_i^2.  ``kappa_source(a)`` returns a * diag(kappa_mu(diag(a), I)).
    A zero start uses a full-matrix warm start to ``warm_t0``.
    """
    if params.beta != 1:
        raise ValueError("the singular-value SDE is implemented for beta = 1")
    r, mu = params.r, params.mu
    if not abs(mu) > (r - 1) / 2:
        raise ValueError("requires |mu| > (r - 1)/2")
    seed, off, ctr = _seed(rng)
    src = kappa_source if kappa_source is not None else kappa_source_for(r, mu)
    init = np.zeros(r) if params.init is None else params.init
    z0 = _initial(init, n_paths, r)
    t0 = 0.0
    if _degenerate(z0):
        if np.any(z0 != 0):
            raise ValueError("degenerate Z start must be the zero matrix")
        z0 = warm_start_Z(r, mu, warm_t0, (seed, off, ctr + 7), n_paths, params.dt)
        t0 = warm_t0

    def drift(ell):
        c, near = _pair_coth(ell)
        ka = src(np.exp(-ell))
        return -2 * mu + 2 * ka + c, near

    record = _record(params.n_steps, params.h, record_every, record_times)
    bank = StreamBank(seed, n_paths, off, ctr)
    vals, ev = _integrate(2 * np.log(z0), drift, 2.0, params.h, params.n_steps, bank, record)
    table = getattr(src, "table", None)
    if table is not None:
        ev["kappa_clamps"] = table.clamp_events
    return SpectrumPath(t0 + _times(params, record), np.sqrt(vals), ev)


# ---------------------------------------------------------------------------
# drift functions in the original coordinates (for term-by-term comparisons)


def common_eig_drift(p, mu, beta):
    """Drift of the common beta SDE for p (original coordinates)."""
    p = np.asarray(p, float)
    diff = p[:, None] - p[None, :]
    np.fill_diagonal(diff, np.inf)
    inter = p * ((p[:, None] + p[None, :]) / diff).sum(axis=1)
    return -p ** 2 + (2 * mu + 2.0 / beta) * p + inter


def wishart_eig_drift_real(p, mu):
    """Drift of the real-case eigenvalue SDE of P written out directly."""
    p = np.asarray(p, float)
    r = len(p)
    out = np.empty(r)
    for i in range(r):
        s = sum((p[i] + p[j]) / (p[i] - p[j]) for j in range(r) if j != i)
        out[i] = -p[i] ** 2 + (2 * mu + 2) * p[i] + p[i] * s
    return out


# ---------------------------------------------------------------------------
# Lyapunov exponents


def lyapunov_exponents(path, burn_in=0.0, per_path=False):
    """Growth rates of the singular values of M_t, ascending.

    QR (Benettin) iteration over the multiplicative increments of the path;
    only increments after ``burn_in`` contribute.  Uses ``path.increments``
    when stored, otherwise M_k^{-1} M_{k+1}.
    """
    t = path.times
    T = t[-1]
    if T - burn_in < 10 - 1e-9:
        raise HorizonTooShort("need at least 10 time units after burn-in")
    P = path.increments
    if P is None:
        V = path.values
        P = np.linalg.solve(V[:, :-1], V[:, 1:])
    n, K, r, _ = P.shape
    Q = np.broadcast_to(np.eye(r, dtype=P.dtype), (n, r, r)).copy()
    acc = np.zeros((n, r))
    for k in range(K):
        Q, R = np.linalg.qr(np.conj(np.swapaxes(P[:, k], -1, -2)) @ Q)
        if t[k] >= burn_in - 1e-12:
            acc += np.log(np.abs(np.diagonal(R, axis1=-2, axis2=-1)))
    est = np.sort(acc / (T - max(burn_in, t[0])), axis=-1)
    return est if per_path else est.mean(axis=0)


# ---------------------------------------------------------------------------
# scaling limits and their oracles


@dataclass(frozen=True)
class ScalingLadder:
    gamma: float
    c_values: tuple
    target: str = "X_top"
    t: float = 1.0
    dt: float = 1e-3

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.target not in ("X_top", "Z_bottom"):
            raise ValueError("target must be 'X_top' or 'Z_bottom'")
        c = tuple(float(v) for v in self.c_values)
        if any(v < 1 for v in c) or list(c) != sorted(c):
            raise ValueError("c values must be ascending and >= 1")
        object.__setattr__(self, "c_values", c)


def reflected_drift_bm(gamma, t, n, rng, dt=1e-4):
    """Euler simulation of Brownian motion with drift -gamma reflected at 0 (Skorohod map), from 0."""
    gen = np.random.default_rng(rng)
    k = int(round(t / dt))
    x = np.zeros(n)
    running_min = np.zeros(n)
    chunk = max(1, 4_000_000 // n)
    done = 0
    while done < k:
        m = min(chunk, k - done)
        inc = gen.standard_normal((m, n)) * np.sqrt(dt) - gamma * dt
        path = x + np.cumsum(inc, axis=0)
        running_min = np.minimum(running_min, path.min(axis=0))
        x = path[-1]
        done += m
    return x - running_min


def reflected_drift_bm_cdf(x, gamma, t):
    """Exact CDF at time t: the reflected process from 0 has the law of sup_{s<=t}(W_s - gamma s)."""
    from scipy.stats import norm
    x = np.asarray(x, float)
    st = np.sqrt(t)
    return np.where(x < 0, 0.0, norm.cdf((x + gamma * t) / st) - np.exp(-2 * gamma * x) * norm.cdf((-x + gamma * t) / st))


def coth_diffusion(gamma, t, n, rng, dt=1e-4, r0=0.0):
    """Euler simulation of dr = dW + gamma coth(gamma r) dt (gamma = 0: Bessel(3), drift 1/r).

    The first step from 0 uses the exact small-time law |3-d Gaussian|.
    """
    gen = np.random.default_rng(rng)
    k = int(round(t / dt))
    x = np.full(n, float(r0))
    if r0 == 0:
        x = np.linalg.norm(gen.standard_normal((n, 3)) * np.sqrt(dt) + np.array([gamma * dt, 0, 0]), axis=1)
        k -= 1
    sq = np.sqrt(dt)
    for _ in range(k):
        g = gamma * x
        drift = np.where(g > 1e-8, gamma / np.tanh(np.maximum(g, 1e-300)), 1.0 / x)
        x = np.abs(x + drift * dt + sq * gen.standard_normal(n))
    return x


def coth_diffusion_exact(gamma, t, n, rng):
    """|W_t + gamma t e_1| for a 3-d Brownian motion W: the exact law of the coth diffusion from 0."""
    gen = np.random.default_rng(rng)
    v = gen.standard_normal((n, 3)) * np.sqrt(t)
    v[:, 0] += gamma * t
    return np.linalg.norm(v, axis=1)


def coth_diffusion_cdf(x, gamma, t):
    """Exact CDF of the coth diffusion from 0 at time t: |W_t + gamma t e_1| is noncentral chi with 3 dof."""
    from scipy.stats import ncx2
    x = np.asarray(x, float)
    return np.where(x <= 0, 0.0, ncx2.cdf(np.maximum(x, 0) ** 2 / t, 3, gamma ** 2 * t))


def scaled_limit_experiment(ladder, rng=0, n_paths=2000, oracle_paths=None, oracle_dt=1e-4,
                            kappa_source=None, warm_t0=0.05):
    """Scaled top eigenvalue of X or bottom singular value of Z along a ladder of c.

    For each c: mu = (r-1)/2 + gamma/c with r = 2, time c^2 t, and the samples
    (1/(2c)) log x_1 (X_top) or (1/c) log z_r (Z_bottom).  Also returns the
    lower X eigenvalue under the same scaling.  The oracle is an Euler
    simulation of the limit diffusion.
    """
    r = 2
    seed, off, ctr = _seed(rng)
    res = {"target": ladder.target, "gamma": ladder.gamma, "t": ladder.t, "per_c": []}
    for ic, c in enumerate(ladder.c_values):
        mu = (r - 1) / 2 + ladder.gamma / c
        T = c * c * ladder.t
        p = EigParams(r, mu, T=T - warm_t0, dt=ladder.dt)
        sub = (seed, off, ctr + 100 * (ic + 1))
        if ladder.target == "X_top":
            sp = evolve_X_eigs(p, sub, n_paths, warm_t0=warm_t0)
            v = sp.values[:, -1]
            res["per_c"].append({"c": c, "mu": mu, "time": T,
                                 "sample": (np.log(v[:, -1]) / (2 * c)).tolist(),
                                 "lower": (np.log(v[:, 0]) / (2 * c)).tolist(),
                                 "events": sp.events})
        else:
            src = kappa_source(mu) if kappa_source is not None else kappa_source_for(r, mu)
            sp = evolve_Z_singvals(p, src, sub, n_paths, warm_t0=warm_t0)
            v = sp.values[:, -1]
            res["per_c"].append({"c": c, "mu": mu, "time": T,
                                 "sample": (np.log(v[:, 0]) / c).tolist(),
                                 "events": sp.events})
    m = oracle_paths or n_paths
    if ladder.target == "X_top":
        res["oracle"] = reflected_drift_bm(ladder.gamma, ladder.t, m, seed + 1, oracle_dt).tolist()
    else:
        res["oracle"] = coth_diffusion(ladder.gamma, ladder.t, m, seed + 1, oracle_dt).tolist()
    return res


# ---------------------------------------------------------------------------
# export


def spectrum_to_csv(sp, fh, index=0):
    r = sp.values.shape[-1]
    fh.write(",".join(["t"] + [f"v{i}" for i in range(r)]) + "\n")
    for t, row in zip(sp.times, sp.values[index]):
        fh.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")


def experiment_to_jsonl(res, fh):
    """One JSON record {c, t, sample} per ladder rung, then the oracle record."""
    for rec in res["per_c"]:
        fh.write(json.dumps({"c": rec["c"], "t": res["t"], "sample": rec["sample"]}) + "\n")
    fh.write(json.dumps({"c": None, "t": res["t"], "sample": res["oracle"], "oracle": True}) + "\n")
