"""Config-driven experiment runner.

    gldufresne run CONFIG.toml [--seed N] [--out DIR] [--threads K]
    gldufresne list-suites
    gldufresne tabulate-kappa GRID.toml [--out FILE]

A config is a flat TOML table.  ``experiment`` names one suite (or a list of
suites); every other key has a typed default (see ``SCHEMA``).  The seed and the
output directory may also come from GLDUFRESNE_SEED and GLDUFRESNE_OUT
(command-line flags win over the environment, which wins over the file).

Each suite writes to {outdir}/{suite}/{seed}/:
    report.json     verification report with a config echo (deterministic)
    summary.csv     one row per (sub)test
    samples.csv     functional values of the compared samples (long format)
    plot_data.csv   tidy quantile / trace data for external plotting
    manifest.json   config, code version, wall-clock, file list (written last, atomically)

Exit codes: 0 all suites pass, 1 a statistical check failed, 2 config error,
3 runtime or numerical error.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, bessel, flows, spectra, verify
from .errors import ConfigError, GLError
from .flows import FlowParams
from .laws import WishartSpec, sample_inv_wishart
from .verify import VerificationReport

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


@dataclass(frozen=True)
class Suite:
    name: str
    description: str
    citation: str
    defaults: dict
    run: object


# ---------------------------------------------------------------------------
# config schema


def _pos(x):
    return x > 0


SCHEMA = {
    # key: (type, default, validator, description)
    "experiment": ((str, list), None, None, "suite name or list of suite names"),
    "r": (int, None, lambda v: 1 <= v <= 6, "matrix dimension"),
    "mu": (float, None, None, "drift parameter"),
    "beta": (int, 1, lambda v: v in (1, 2, 4), "1 real, 2 complex, 4 quaternion (spectra only)"),
    "n_paths": (int, 5000, lambda v: v >= 1, "Monte Carlo paths per side"),
    "n_samples": (int, 20000, lambda v: v >= 1, "MCMC samples"),
    "n_mc": (int, 1_000_000, lambda v: v >= 1, "Monte Carlo draws for the Laplace transform"),
    "T": (float, 1.0, _pos, "time horizon"),
    "dt": (float, 1e-3, _pos, "time step"),
    "T_neg": (float, 0.0, lambda v: v >= 0, "negative-time horizon (0: from tail_tol)"),
    "burn_in": (float, 0.0, lambda v: v >= 0, "Lyapunov burn-in time"),
    "times": (list, [0.5, 1.0, 2.0], None, "observation times"),
    "joint": (list, [0.5, 1.5], None, "two-time joint test"),
    "tail_tol": (float, 1e-4, lambda v: 0 < v < 1, "A_inf truncation tolerance"),
    "alpha": (float, 0.01, lambda v: 0 < v < 1, "test level"),
    "tolerance": (float, 0.05, _pos, "relative or absolute tolerance of the suite's main check"),
    "bandwidth": (float, 0.1, _pos, "conditioning bandwidth in log singular values"),
    "gamma": (float, 1.0, _pos, "scaling-limit drift"),
    "c": (list, [2.0, 4.0, 8.0], None, "scaling ladder"),
    "oracle_dt": (float, 1e-4, _pos, "oracle Euler step"),
    "kappa_mu": (float, 1.5, _pos, "index for the kappa identity (r = 2)"),
    "kappa_a": (list, [1.0, 2.0], None, "diagonal argument for the kappa identity"),
    "n_indices": (int, 1000, lambda v: v >= 1, "random Mellin indices"),
    "threads": (int, 1, lambda v: v >= 1, "worker cap"),
    "seed": (int, 0, lambda v: v >= 0, "master seed"),
    "outdir": (str, "runs", None, "output root"),
}


def _coerce(key, value):
    typ, _, check, _ = SCHEMA[key]
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(typ, tuple):
        ok = isinstance(value, typ)
    else:
        ok = isinstance(value, typ) and not (typ is int and isinstance(value, bool))
    if not ok:
        raise ConfigError(f"{key}: expected {typ}, got {type(value).__name__}")
    if typ is float and not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite")
    if check is not None and not check(value):
        raise ConfigError(f"{key}: invalid value {value!r}")
    if typ is list:
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected a list of numbers")
        value = [float(v) for v in value]
    return value


def validate_config(raw, suite_name=None):
    """Merged, type-checked config for one suite: schema defaults < suite defaults < file."""
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    name = suite_name or raw.get("experiment")
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; valid suites: {', '.join(SUITES)}")
    cfg = {k: v[1] for k, v in SCHEMA.items()}
    cfg.update(SUITES[name].defaults)
    for k, v in raw.items():
        if k != "experiment":
            cfg[k] = _coerce(k, v)
    cfg["experiment"] = name
    if cfg["r"] is None or cfg["mu"] is None:
        raise ConfigError("r and mu are required")
    if any(t <= 0 for t in cfg["times"] + cfg["joint"] + cfg["c"]):
        raise ConfigError("times, joint and c must be positive")
    return cfg


def load_config(path, seed=None, outdir=None):
    """Parse a TOML file, apply overrides and validate every suite it names."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    env_seed = os.environ.get("GLDUFRESNE_SEED")
    env_out = os.environ.get("GLDUFRESNE_OUT")
    if env_seed is not None:
        try:
            raw["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError("GLDUFRESNE_SEED must be an integer") from exc
    if env_out is not None:
        raw["outdir"] = env_out
    if seed is not None:
        raw["seed"] = seed
    if outdir is not None:
        raw["outdir"] = outdir
    names = raw.get("experiment")
    if names is None:
        raise ConfigError("missing 'experiment'")
    names = [names] if isinstance(names, str) else list(names)
    return [validate_config(raw, n) for n in names]


# ---------------------------------------------------------------------------
# suites; each returns (report, extra_files) with extra_files {name: text}


def _suite_dufresne(cfg):
    rep = verify.dufresne_test(cfg["r"], cfg["mu"], cfg["n_paths"], cfg["seed"], cfg["dt"], cfg["tail_tol"],
                               cfg["alpha"], cfg["threads"])
    ok = rep.passed
    tgt = rep.extra["target_mean"]
    if tgt is not None:
        rel = np.abs(rep.extra["mean"] - tgt) / np.diag(tgt).mean()
        rep.extra["mean_rel_err"] = rel
        ok = ok and bool(np.all(rel < cfg["tolerance"]))
    if cfg["r"] == 1:
        ok = ok and rep.extra["ks_exact_p"] > cfg["alpha"]
    rep.passed = bool(ok)
    return rep, {}


def _suite_process_dufresne(cfg):
    return verify.process_dufresne_test(cfg["r"], cfg["mu"], tuple(cfg["times"]), tuple(cfg["joint"]),
                                        cfg["n_paths"], cfg["seed"], cfg["dt"], cfg["tail_tol"], cfg["alpha"]), {}


def _suite_bessel_pde(cfg):
    t0 = time.perf_counter()
    r, mu = cfg["r"], cfg["mu"]
    rows = []
    if r == 1:
        for y in (0.25, 1.0, 4.0):
            res = bessel.pde_residual_U(np.array([[y]]), mu)
            rows.append({"Y": [[y]], "residual": res})
        tol = 1e-4 if cfg["tolerance"] == SCHEMA["tolerance"][1] else cfg["tolerance"]
    else:
        res = bessel.pde_residual_U(np.eye(r), mu, n_mc=cfg["n_mc"], rng=cfg["seed"])
        rows.append({"Y": np.eye(r), "residual": res})
        tol = cfg["tolerance"]
    worst = max(abs(row["residual"]) for row in rows)
    pde = VerificationReport(name=f"bessel-pde r={r} mu={mu}", passed=bool(worst < tol), alpha=float("nan"),
                             runtime=time.perf_counter() - t0,
                             extra={"residuals": rows, "max_abs_residual": worst, "tolerance": tol})
    parts = [pde]
    if r == 2:
        parts.append(verify.kappa_identity_check(cfg["kappa_mu"], tuple(cfg["kappa_a"]),
                                                 cfg["n_samples"], cfg["seed"]))
    return verify.combine(f"bessel r={r}", parts, float("nan")), {}


def _suite_mellin(cfg):
    t0 = time.perf_counter()
    gen = np.random.default_rng([cfg["seed"], 77])
    worst = 0.0
    for _ in range(cfg["n_indices"]):
        r = int(gen.integers(1, cfg["r"] + 1))
        s = gen.uniform(-3, 3, r)
        mu = gen.uniform((r - 1) / 2 + 0.05, r + 4)
        idx = bessel.MellinIndex(r, mu, s)
        c1, c2, c3, res = bessel.mellin_multipliers(idx)
        worst = max(worst, abs(res) / max(1.0, abs(c1), abs(c3)))
    dt = time.perf_counter() - t0
    tol = 1e-12
    return VerificationReport(name=f"mellin r<={cfg['r']}", passed=bool(worst < tol), alpha=float("nan"),
                              runtime=dt, extra={"max_scaled_residual": worst, "tolerance": tol,
                                                 "n_indices": cfg["n_indices"]}), {}


def _suite_z_flip(cfg):
    args = dict(times=tuple(cfg["times"]), joint=tuple(cfg["joint"]), n_paths=cfg["n_paths"], rng=cfg["seed"],
                dt=cfg["dt"], alpha=cfg["alpha"])
    main = verify.z_sign_flip_test(cfg["r"], cfg["mu"], **args)
    ctrl = verify.z_sign_flip_test(cfg["r"], cfg["mu"], mu_alt=2 * cfg["mu"], **args)
    rep = verify.combine(f"z-flip r={cfg['r']} mu={cfg['mu']}", [main, ctrl], cfg["alpha"],
                         passed=main.passed and not ctrl.passed,
                         notes="second part is a negative control and must fail")
    return rep, {}


def _suite_gig(cfg):
    rep = verify.conditional_gig_diagnostic(cfg["r"], cfg["mu"], cfg["T"], cfg["n_paths"], cfg["bandwidth"],
                                            cfg["seed"], cfg["dt"], alpha=cfg["alpha"])
    if cfg["r"] == 1:
        rep.passed = bool(rep.passed and rep.extra["bias_shrinks"])
    return rep, {}


def _suite_burke_oioo(cfg):
    times = tuple(t for t in cfg["times"] if t <= cfg["T"]) or (cfg["T"],)
    rep = verify.burke_tests(cfg["r"], cfg["mu"], cfg["n_paths"], cfg["seed"], cfg["dt"], cfg["tail_tol"],
                             cfg["alpha"], times=times, include=("oioo",))
    return rep, {}


def _suite_burke_tito(cfg):
    args = (cfg["r"], cfg["mu"], cfg["n_paths"], cfg["seed"], cfg["dt"], cfg["tail_tol"], cfg["alpha"])
    main = verify.burke_tests(*args, interval=cfg["T"], include=("tito", "bhat"))
    ctrl = verify.burke_tests(*args, interval=cfg["T"], compensate=False, include=("tito",))
    rep = verify.combine(f"burke-tito r={cfg['r']} mu={cfg['mu']}", [main, ctrl], cfg["alpha"],
                         passed=main.passed and not ctrl.passed,
                         notes="uncompensated run is a negative control and must fail")
    return rep, {}


def _suite_lyapunov(cfg):
    t0 = time.perf_counter()
    r, mu = cfg["r"], cfg["mu"]
    p = FlowParams(r, mu, T=cfg["T"], dt=cfg["dt"])
    est = []
    n_left, k = cfg["n_paths"], 0
    while n_left > 0:  # chunks keep the increment store small
        m = min(n_left, 50)
        M, _ = flows.simulate(p, (cfg["seed"], k * 50, 0), m, record_every=1, accumulate=False,
                              store_increments=True)
        est.append(spectra.lyapunov_exponents(M, cfg["burn_in"], per_path=True))
        n_left -= m
        k += 1
    est = np.concatenate(est)
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / np.sqrt(len(est)) if len(est) > 1 else np.zeros(r)
    target = verify.lyapunov_targets(r, mu)
    err = np.abs(mean - target)
    rep = VerificationReport(name=f"lyapunov r={r} mu={mu}", sizes=(len(est),), alpha=float("nan"),
                             passed=bool(np.all(err < cfg["tolerance"])), runtime=time.perf_counter() - t0,
                             extra={"estimate": mean, "se": se, "target": target, "abs_err": err,
                                    "tolerance": cfg["tolerance"],
                                    "half_spacing_rates": mu + 0.5 * np.arange(r),
                                    "abs_err_half_spacing": np.abs(mean - (mu + 0.5 * np.arange(r)))},
                             notes="half_spacing_rates: the mu + (i-1)/2 variant, reported for comparison")
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["path", "index", "exponent"])
    for i, row in enumerate(est):
        for j, v in enumerate(row):
            w.writerow([i, j, repr(float(v))])
    return rep, {"samples.csv": buf.getvalue()}


def _scaling(cfg, target):
    t0 = time.perf_counter()
    ladder = spectra.ScalingLadder(cfg["gamma"], tuple(cfg["c"]), target, t=1.0, dt=cfg["dt"])
    res = spectra.scaled_limit_experiment(ladder, cfg["seed"], cfg["n_paths"], oracle_dt=cfg["oracle_dt"])
    g, t = ladder.gamma, ladder.t
    if target == "X_top":
        def cdf(x):
            return spectra.reflected_drift_bm_cdf(x, g, t)
    else:
        def cdf(x):
            return spectra.coth_diffusion_cdf(x, g, t)
    from scipy import stats
    rungs = []
    for rec in res["per_c"]:
        x = np.asarray(rec["sample"])
        rungs.append({"c": rec["c"], "mu": rec["mu"], "ks_exact": stats.kstest(x, cdf).statistic,
                      "ks_oracle": stats.ks_2samp(x, res["oracle"]).statistic,
                      "median": float(np.median(x))})
    oracle_check = stats.kstest(np.asarray(res["oracle"]), cdf).statistic
    top = rungs[-1]
    ok = top["ks_exact"] < cfg["tolerance"]
    extra = {"rungs": rungs, "oracle_vs_exact_ks": oracle_check, "tolerance": cfg["tolerance"]}
    if target == "Z_bottom":
        b3 = spectra.coth_diffusion(1e-6, t, cfg["n_paths"], cfg["seed"] + 2, cfg["oracle_dt"])
        d = stats.kstest(b3, lambda x: stats.chi(3, scale=np.sqrt(t)).cdf(x)).statistic
        extra["bessel3_ks"] = d
        ok = ok and d < 0.05
    rep = VerificationReport(name=f"scaling {target} gamma={g}", sizes=(cfg["n_paths"],), alpha=float("nan"),
                             passed=bool(ok), runtime=time.perf_counter() - t0, extra=extra,
                             notes="qualitative convergence; no rate is asserted")
    buf = io.StringIO()
    spectra.experiment_to_jsonl(res, buf)
    return rep, {"samples.jsonl": buf.getvalue()}


def _suite_scaling_x(cfg):
    return _scaling(cfg, "X_top")


def _suite_scaling_z(cfg):
    return _scaling(cfg, "Z_bottom")


def _suite_eig(cfg):
    r, mu, n, seed, alpha = cfg["r"], cfg["mu"], cfg["n_paths"], cfg["seed"], cfg["alpha"]
    T, dt = cfg["T"], cfg["dt"]
    vec = verify.FunctionalSet("vector")
    parts = []

    def logs(v):
        return np.log(np.sort(v, axis=-1))

    for beta in (1, 2):
        fp = FlowParams(r, mu, beta=beta, T=T, dt=dt)
        gen = np.random.default_rng([seed, 10 + beta])
        Q0 = sample_inv_wishart(WishartSpec(r, 2 * mu, beta=beta), gen, n)
        Q = flows.evolve_Q(Q0, fp, (seed, 0, 20 + beta), n, record_times=[T])
        eq = logs(np.linalg.eigvalsh(Q.values[:, -1]))
        ep = spectra.evolve_P_eigs(spectra.EigParams(r, mu, beta, T, dt, init=1.0 / np.linalg.eigvalsh(Q0)),
                                   (seed, 0, 30 + beta), n)
        parts.append(verify.two_sample_test(eq, logs(1.0 / ep.values[:, -1]), vec, alpha, rng=seed + beta,
                                            name=f"Q beta={beta}"))
    M, X = flows.evolve_X(FlowParams(r, mu, T=T, dt=dt), (seed, 0, 40), n, record_times=[T])
    warm = 0.05  # the eigenvalue SDEs enter from 0 through a full-matrix warm start to this time
    ex = spectra.evolve_X_eigs(spectra.EigParams(r, mu, 1, T - warm, dt), (seed, 0, 41), n, warm_t0=warm)
    parts.append(verify.two_sample_test(logs(np.linalg.eigvalsh(X.values[:, -1])), logs(ex.values[:, -1]), vec,
                                        alpha, rng=seed + 3, name="X"))
    M, A = flows.simulate(FlowParams(r, mu, T=T, dt=dt), (seed, 0, 50), n, record_times=[T])
    z = np.linalg.svd(np.linalg.solve(M.values[:, -1], A.values[:, -1]), compute_uv=False)
    ez = spectra.evolve_Z_singvals(spectra.EigParams(r, mu, 1, T - warm, dt), spectra.kappa_source_for(r, mu),
                                   (seed, 0, 51), n, warm_t0=warm)
    parts.append(verify.two_sample_test(logs(z), logs(ez.values[:, -1]), vec, alpha, rng=seed + 4, name="Z"))
    return verify.combine(f"eig-consistency r={r} mu={mu}", parts, alpha), {}


def _suite_stationarity(cfg):
    t0 = time.perf_counter()
    r, mu, n = cfg["r"], cfg["mu"], cfg["n_paths"]
    grid = [float(x) for x in np.linspace(0, cfg["T"], 9)[1:]]
    fp = FlowParams(r, mu, T=cfg["T"], dt=cfg["dt"])
    Q0 = sample_inv_wishart(WishartSpec(r, 2 * mu), np.random.default_rng([cfg["seed"], 1]), n)
    Q = flows.evolve_Q(Q0, fp, (cfg["seed"], 0, 2), n, record_times=grid)
    tr = np.trace(Q.values, axis1=-2, axis2=-1)
    means = tr.mean(axis=0)
    se = tr.std(axis=0, ddof=1) / np.sqrt(n)
    ref = float(np.trace(Q0, axis1=-2, axis2=-1).mean())
    exact = r / (2 * mu - r - 1) if 2 * mu > r + 1 else float("inf")
    rel = np.abs(means / ref - 1)
    rep = VerificationReport(name=f"stationarity-q r={r} mu={mu}", sizes=(n,), alpha=float("nan"),
                             passed=bool(np.all(rel < cfg["tolerance"])), runtime=time.perf_counter() - t0,
                             extra={"times": Q.times, "mean_trace": means, "se": se, "initial_mean_trace": ref,
                                    "exact_mean_trace": exact, "rel_dev": rel,
                                    "cone_exits": Q.provenance.get("cone_exits", 0)})
    return rep, {}


SUITES = {s.name: s for s in (
    Suite("dufresne", "A_inf of the -mu flow against inverse Wishart(2 mu)",
          "matrix Dufresne identity", {"r": 2, "mu": 3.0}, _suite_dufresne),
    Suite("process-dufresne", "(A_t^{(mu)})^{-1} against (A_t^{(-mu)})^{-1} - (A_inf^{(-mu)})^{-1}",
          "process-level Dufresne identity", {"r": 2, "mu": 3.0}, _suite_process_dufresne),
    Suite("bessel-pde", "generator equation for the Laplace transform of inverse Wishart; kappa identity",
          "K-Bessel PDE and the kappa_mu - kappa_-mu = 2 mu I identity", {"r": 2, "mu": 3.0},
          _suite_bessel_pde),
    Suite("mellin", "algebraic Mellin multiplier identity over random indices",
          "Mellin transform of the inverse Wishart power function", {"r": 6, "mu": 1.0}, _suite_mellin),
    Suite("z-flip", "law of Z from M^{(mu)} against M^{(-mu)}, with a mu vs 2 mu control",
          "mu -> -mu invariance of Z", {"r": 2, "mu": 1.0, "times": [0.5, 1.0], "joint": [0.5, 1.0]},
          _suite_z_flip),
    Suite("gig-diagnostic", "nearest-neighbour conditional law of M^T Z^{-1} against matrix GIG",
          "conditional GIG law given Z (intertwining)", {"r": 1, "mu": 1.5, "n_paths": 20000},
          _suite_gig),
    Suite("burke-oioo", "one-in-one-out output process against a fresh flow",
          "Burke one-in-one-out theorem", {"r": 2, "mu": 3.0, "times": [0.5, 1.0]}, _suite_burke_oioo),
    Suite("burke-tito", "two-in-two-out outputs and the enlarged-filtration motion are Brownian",
          "Burke two-in-two-out theorem; enlargement of filtration", {"r": 2, "mu": 3.0, "n_paths": 10000},
          _suite_burke_tito),
    Suite("lyapunov", "singular-value growth rates mu + i - (r+1)/2",
          "Lyapunov exponents of M", {"r": 3, "mu": 2.0, "T": 50.0, "n_paths": 200, "tolerance": 0.07,
                                      "burn_in": 0.0}, _suite_lyapunov),
    Suite("scaling-x", "scaled top log-eigenvalue of X against reflected drifted Brownian motion",
          "scaling limit of X", {"r": 2, "mu": 0.625, "n_paths": 2000, "tolerance": 0.1}, _suite_scaling_x),
    Suite("scaling-z", "scaled bottom log-singular-value of Z against the coth diffusion",
          "scaling limit of Z", {"r": 2, "mu": 0.625, "n_paths": 2000, "tolerance": 0.1}, _suite_scaling_z),
    Suite("eig-consistency", "full-matrix Q, X, Z spectra against their eigenvalue SDEs",
          "eigenvalue SDEs of Q, X and Z", {"r": 2, "mu": 3.0}, _suite_eig),
    Suite("stationarity-q", "E tr Q_t constant from the inverse-Wishart start",
          "stationarity of Q", {"r": 2, "mu": 3.0, "T": 2.0}, _suite_stationarity),
)}


def list_suites():
    return [(s.name, s.description, s.citation) for s in SUITES.values()]


# ---------------------------------------------------------------------------
# persistence


def _atomic_write(path, text):
    d = os.path.dirname(path)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _plot_rows(rep, prefix=""):
    name = prefix + rep.name
    for fname, f in rep.functionals.items():
        for lvl, qa, qb in zip(np.linspace(0.05, 0.95, 19), f["quantiles_a"], f["quantiles_b"]):
            yield {"test": name, "series": fname, "x": repr(float(lvl)), "a": repr(float(qa)),
                   "b": repr(float(qb))}
    for key in ("mean_trace",):
        if key in rep.extra:
            for t, v in zip(rep.extra["times"], rep.extra[key]):
                yield {"test": name, "series": key, "x": repr(float(t)), "a": repr(float(v)), "b": ""}
    for p in rep.parts:
        yield from _plot_rows(p, name + "/")


def _sample_rows(rep, prefix=""):
    name = prefix + rep.name
    if rep.samples is not None:
        for side in ("a", "b"):
            F = rep.samples[side]
            for i, row in enumerate(F):
                for fname, v in zip(rep.samples["names"], row):
                    yield [name, side, i, fname, repr(float(v))]
    for p in rep.parts:
        yield from _sample_rows(p, name + "/")


def write_outputs(cfg, rep, files, wall):
    d = os.path.join(cfg["outdir"], cfg["experiment"], str(cfg["seed"]))
    os.makedirs(d, exist_ok=True)
    echo = {k: v for k, v in cfg.items() if k not in ("outdir", "threads")}
    written = {}
    written["report.json"] = rep.to_json(include_runtime=False, config=echo)
    written["summary.csv"] = verify.summary_csv([rep])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["test", "series", "x", "a", "b"])
    w.writeheader()
    w.writerows(_plot_rows(rep))
    written["plot_data.csv"] = buf.getvalue()
    rows = list(_sample_rows(rep))
    if rows:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["test", "side", "index", "functional", "value"])
        w.writerows(rows)
        written["samples.csv"] = buf.getvalue()
    written.update(files)
    for name, text in written.items():
        _atomic_write(os.path.join(d, name), text)
    manifest = {"config": verify._jsonable(cfg), "code_version": __version__, "wall_clock_seconds": wall,
                "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(time.time() - wall)),
                "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
                "passed": rep.passed, "reports": sorted(written)}
    _atomic_write(os.path.join(d, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True))
    return d


def run_suite(cfg, write=True):
    """Run one validated suite config; returns (report, output directory or None)."""
    t0 = time.perf_counter()
    rep, files = SUITES[cfg["experiment"]].run(cfg)
    wall = time.perf_counter() - t0
    return rep, (write_outputs(cfg, rep, files, wall) if write else None)


def tabulate_kappa(path, out=None):
    """Build a KappaTable from a grid config (mu, lo, hi, step) and write it as CSV."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read grid config: {exc}") from exc
    allowed = {"mu", "lo", "hi", "step", "out"}
    if set(raw) - allowed or "mu" not in raw:
        raise ConfigError(f"grid config needs 'mu' and accepts only {sorted(allowed)}")
    lo, hi, step = float(raw.get("lo", -10)), float(raw.get("hi", 14)), float(raw.get("step", 0.25))
    if not (hi > lo and step > 0):
        raise ConfigError("need hi > lo and step > 0")
    table = bessel.KappaTable(float(raw["mu"]), lo=lo, hi=hi, step=step)
    dest = out or raw.get("out", "kappa_table.csv")
    buf = io.StringIO()
    table.to_csv(buf)
    os.makedirs(os.path.dirname(os.path.abspath(dest)), exist_ok=True)
    _atomic_write(os.path.abspath(dest), buf.getvalue())
    return dest


def main(argv=None):
    ap = argparse.ArgumentParser(prog="gldufresne", description="Brownian motion on GL(r) laboratory")
    sub = ap.add_subparsers(dest="cmd", required=True)
    pr = sub.add_parser("run", help="run the suite(s) named in a config file")
    pr.add_argument("config")
    pr.add_argument("--seed", type=int)
    pr.add_argument("--out")
    pr.add_argument("--threads", type=int)
    sub.add_parser("list-suites", help="list the named experiments")
    pk = sub.add_parser("tabulate-kappa", help="tabulate kappa_mu(diag(a1,a2), I) for r = 2")
    pk.add_argument("grid_config")
    pk.add_argument("--out")
    args = ap.parse_args(argv)

    if args.cmd == "list-suites":
        for name, desc, cite in list_suites():
            print(f"{name:18s} {desc}  [{cite}]")
        return EXIT_PASS
    try:
        if args.cmd == "tabulate-kappa":
            print(tabulate_kappa(args.grid_config, args.out))
            return EXIT_PASS
        cfgs = load_config(args.config, args.seed, args.out)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            for c in cfgs:
                c["threads"] = args.threads
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = EXIT_PASS
    for cfg in cfgs:
        try:
            rep, d = run_suite(cfg)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (GLError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            print(f"{cfg['experiment']}: {type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"{cfg['experiment']}: {'PASS' if rep.passed else 'FAIL'}  -> {d}")
        if not rep.passed:
            code = EXIT_FAIL
    return code


if __name__ == "__main__":
    sys.exit(main())
