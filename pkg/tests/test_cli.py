import json
import os

import numpy as np
import pytest

from gldufresne import cli
from gldufresne.errors import ConfigError

SUITE_NAMES = ["dufresne", "process-dufresne", "bessel-pde", "mellin", "z-flip", "gig-diagnostic", "burke-oioo",
               "burke-tito", "lyapunov", "scaling-x", "scaling-z", "eig-consistency", "stationarity-q"]


def _toml(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_list_suites(capsys):
    assert [s[0] for s in cli.list_suites()] == SUITE_NAMES
    assert cli.main(["list-suites"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 13


@pytest.mark.parametrize("body", [
    'experiment = "nope"',
    'experiment = "mellin"\nbogus = 1',
    'experiment = "mellin"\ndt = -0.1',
    'experiment = "mellin"\nn_paths = "many"',
    'experiment = [',
])
def test_config_errors_exit_2_and_write_nothing(tmp_path, body):
    out = tmp_path / "out"
    assert cli.main(["run", _toml(tmp_path, body), "--out", str(out)]) == 2
    assert not out.exists()


def test_domain_error_exits_3(tmp_path, capsys):
    out = tmp_path / "out"
    path = _toml(tmp_path, 'experiment = "dufresne"\nr = 2\nmu = 0.2')
    assert cli.main(["run", path, "--out", str(out)]) == 3
    assert "DomainError" in capsys.readouterr().err
    assert not out.exists()


def test_validate_fills_defaults():
    cfg = cli.validate_config({"experiment": "dufresne"})
    assert cfg["r"] == 2 and cfg["mu"] == 3.0 and cfg["dt"] == 1e-3
    with pytest.raises(ConfigError):
        cli.validate_config({"experiment": "dufresne", "mu": 3.0, "r": 9})


def test_override_precedence(tmp_path, monkeypatch):
    path = _toml(tmp_path, 'experiment = "mellin"\nseed = 1\noutdir = "file"')
    assert cli.load_config(path)[0]["seed"] == 1
    monkeypatch.setenv("GLDUFRESNE_SEED", "5")
    monkeypatch.setenv("GLDUFRESNE_OUT", "env")
    cfg = cli.load_config(path)[0]
    assert (cfg["seed"], cfg["outdir"]) == (5, "env")
    cfg = cli.load_config(path, seed=9, outdir="flag")[0]
    assert (cfg["seed"], cfg["outdir"]) == (9, "flag")
    monkeypatch.setenv("GLDUFRESNE_SEED", "x")
    with pytest.raises(ConfigError):
        cli.load_config(path)


def test_mellin_run_outputs_and_rerun_is_byte_identical(tmp_path):
    path = _toml(tmp_path, 'experiment = "mellin"\nn_indices = 200\nseed = 3')
    out = tmp_path / "runs"
    assert cli.main(["run", path, "--out", str(out)]) == 0
    d = out / "mellin" / "3"
    first = (d / "report.json").read_bytes()
    manifest = json.loads((d / "manifest.json").read_text())
    assert {"report.json", "summary.csv", "plot_data.csv"} <= set(manifest["reports"])
    assert manifest["config"]["seed"] == 3 and manifest["passed"]
    report = json.loads(first)
    assert report["config"]["n_indices"] == 200 and "runtime" not in report
    assert cli.main(["run", path, "--out", str(out)]) == 0
    assert (d / "report.json").read_bytes() == first
    assert not [f for f in os.listdir(d) if f.startswith(".tmp-")]


def test_statistical_failure_exits_1(tmp_path):
    # a tolerance of zero cannot be met by any finite Monte Carlo run
    path = _toml(tmp_path, 'experiment = "dufresne"\nr = 1\nmu = 2.5\nn_paths = 600\ntolerance = 1e-9')
    assert cli.main(["run", path, "--out", str(tmp_path / "o")]) == 1


def test_tabulate_kappa(tmp_path):
    grid = _toml(tmp_path, "mu = 1.5\nlo = -1.0\nhi = 1.0\nstep = 0.5", "grid.toml")
    dest = tmp_path / "k.csv"
    assert cli.main(["tabulate-kappa", grid, "--out", str(dest)]) == 0
    rows = dest.read_text().strip().splitlines()
    assert len(rows) > 1
    bad = _toml(tmp_path, "lo = 0", "bad.toml")
    assert cli.main(["tabulate-kappa", bad]) == 2


def test_stationarity_suite_small():
    cfg = cli.validate_config({"experiment": "stationarity-q", "n_paths": 400, "T": 0.5, "dt": 2e-3,
                               "tolerance": 0.2})
    rep, d = cli.run_suite(cfg, write=False)
    assert d is None and rep.passed
    assert np.isfinite(rep.extra["mean_trace"]).all()
