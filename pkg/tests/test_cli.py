import json
import math
import os

import numpy as np
import pytest

from synscale import cli, engine, model


PA_MODEL = """\
[model]
family = pa
lambda = 1.0
beta = 1.0
nu = 0.0
mu = 1.0
alpha = 1.0
w0 = 1.0
B_p1 = 1.0
B_p2 = 1.0
B_d1 = 1.0
B_d2 = 1.0
gamma_p1 = 1.0
gamma_p2 = 1.0
gamma_d1 = 1.0
gamma_d2 = 1.0
"""

SIMPLE_MODEL = """\
[model]
family = simple
lambda = 1.0
beta = 1.0
nu = 1.0
mu = 2.0
w0 = 1.0
B1 = 1.0
B2 = 0.0
gamma = 1.0
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _read_csv(path):
    with open(path) as fh:
        header = fh.readline()
        cols = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return header, cols, rows


def test_load_config_overrides_and_errors(tmp_path):
    path = _write(tmp_path, "c.ini", PA_MODEL + "[run]\nmode = simulate\n")
    cfg = cli.load_config(path, ["run.horizon=2.0", "model.lambda = 3"],
                          seed=7, out="/tmp/x")
    assert cfg["run"]["horizon"] == "2.0"
    assert cfg["model"]["lambda"] == "3"
    assert cfg["run"]["seed"] == "7"
    assert cfg["output"]["directory"] == "/tmp/x"
    with pytest.raises(model.SpecError):
        cli.load_config(path, ["nonsense"])
    with pytest.raises(model.SpecError):
        cli.load_config(path, ["nodot=1"])
    with pytest.raises(model.SpecError):
        cli.load_config(str(tmp_path / "absent.ini"), [])


def test_config_hash_ignores_output_section(tmp_path):
    path = _write(tmp_path, "c.ini", PA_MODEL + "[run]\nmode = simulate\n")
    a = cli.config_hash(cli.load_config(path, [], out="/tmp/a"))
    b = cli.config_hash(cli.load_config(path, [], out="/tmp/b"))
    c = cli.config_hash(cli.load_config(path, ["model.lambda=2"]))
    assert a == b
    assert a != c


def test_simulate_mode_writes_trajectory(tmp_path):
    path = _write(tmp_path, "c.ini", PA_MODEL +
                  "[run]\nmode = simulate\nhorizon = 1.0\nepsilon = 0.1\n"
                  "grid_points = 11\nseed = 3\n")
    out = str(tmp_path / "out")
    assert cli.main(["--config", path, "--out", out, "--quiet"]) == 0
    header, cols, rows = _read_csv(os.path.join(out, "trajectory.csv"))
    assert header.startswith("# config_hash=")
    assert "artifact_version=1" in header
    assert cols == ["t", "x", "z_1", "z_2", "z_3", "z_4",
                    "omega_p", "omega_d", "w"]
    assert len(rows) == 11
    assert float(rows[0][-1]) == 1.0
    meta = json.loads(open(os.path.join(out, "trajectory.json")).read())
    assert meta["data"]["terminated"] == "completed"


def test_limit_mode_pure_leak(tmp_path):
    # symmetric drives cancel: w(1) = e^{-1}
    path = _write(tmp_path, "c.ini", PA_MODEL +
                  "[run]\nmode = limit\nhorizon = 1.0\ngrid_points = 21\n")
    out = str(tmp_path / "out")
    assert cli.main(["--config", path, "--out", out, "--quiet"]) == 0
    _, cols, rows = _read_csv(os.path.join(out, "limit.csv"))
    assert float(rows[-1][cols.index("w")]) == pytest.approx(math.exp(-1.0),
                                                             abs=1e-8)
    blow = json.loads(open(os.path.join(out, "limit.json")).read())
    assert blow["data"]["blowup"] is None


def test_invariant_mode_mean_potential(tmp_path):
    path = _write(tmp_path, "c.ini", PA_MODEL +
                  "[run]\nmode = invariant\nw = 2.0\nhorizon = 2000\n"
                  "functionals = mean_x, mean_z1\nseed = 11\n")
    out = str(tmp_path / "out")
    assert cli.main(["--config", path, "--out", out, "--quiet"]) == 0
    _, cols, rows = _read_csv(os.path.join(out, "invariant.csv"))
    table = {r[0]: (float(r[1]), float(r[2])) for r in rows}
    # E[X] = lam w = 2, E[Z1] = lam B / gamma = 1
    assert abs(table["mean_x"][0] - 2.0) < 5 * table["mean_x"][1]
    assert abs(table["mean_z1"][0] - 1.0) < 5 * table["mean_z1"][1]


def test_sweep_mode_byte_determinism_across_threads(tmp_path, monkeypatch):
    path = _write(tmp_path, "c.ini", SIMPLE_MODEL +
                  "[run]\nmode = sweep\nhorizon = 1.0\nepsilon = 0.2,0.1\n"
                  "replicas = 4\ngrid_points = 11\nseed = 5\n")
    blobs = []
    for i, threads in enumerate(("1", "4", "1")):
        monkeypatch.setenv("SIM_THREADS", threads)
        out = str(tmp_path / f"out{i}")
        assert cli.main(["--config", path, "--out", out, "--quiet"]) == 0
        blobs.append(open(os.path.join(out, "sweep.csv"), "rb").read())
    assert blobs[0] == blobs[1] == blobs[2]


def test_exit_code_2_on_bad_config(tmp_path):
    path = _write(tmp_path, "c.ini", PA_MODEL + "[run]\nmode = warp\n")
    out = str(tmp_path / "out")
    os.makedirs(out)
    assert cli.main(["--config", path, "--out", out, "--quiet"]) == 2
    diag = json.loads(open(os.path.join(out, "diagnostics.json")).read())
    assert diag["exit_code"] == 2
    assert "mode" in diag["message"]


def test_exit_code_2_on_pns_family(tmp_path):
    path = _write(tmp_path, "c.ini",
                  "[model]\nfamily = pns\nlambda = 1.0\nbeta = 1.0\n"
                  "[run]\nmode = simulate\nhorizon = 1.0\n")
    assert cli.main(["--config", path, "--out", str(tmp_path / "o"),
                     "--quiet"]) == 2


def test_exit_code_3_on_numeric_error(tmp_path, monkeypatch):
    def boom(cfg, m, outdir, h):
        raise engine.NumericError("no contributing replicas")

    monkeypatch.setitem(cli.MODES, "simulate", boom)
    path = _write(tmp_path, "c.ini", PA_MODEL + "[run]\nmode = simulate\n")
    out = str(tmp_path / "out")
    assert cli.main(["--config", path, "--out", out, "--quiet"]) == 3
    diag = json.loads(open(os.path.join(out, "diagnostics.json")).read())
    assert diag["exit_code"] == 3


def test_exit_code_4_on_budget(tmp_path):
    path = _write(tmp_path, "c.ini", PA_MODEL +
                  "[run]\nmode = simulate\nhorizon = 5.0\nepsilon = 0.01\n"
                  "max_events = 20\n")
    out = str(tmp_path / "out")
    assert cli.main(["--config", path, "--out", out, "--quiet"]) == 4
    diag = json.loads(open(os.path.join(out, "diagnostics.json")).read())
    assert diag["exit_code"] == 4


def test_seed_changes_artifacts(tmp_path):
    path = _write(tmp_path, "c.ini", PA_MODEL +
                  "[run]\nmode = simulate\nhorizon = 1.0\nepsilon = 0.1\n"
                  "grid_points = 11\n")
    outs = []
    for seed in (1, 2):
        out = str(tmp_path / f"s{seed}")
        assert cli.main(["--config", path, "--out", out, "--seed", str(seed),
                         "--quiet"]) == 0
        outs.append(open(os.path.join(out, "trajectory.csv")).read())
    assert outs[0] != outs[1]


def test_figure1_mode_smoke(tmp_path):
    path = _write(tmp_path, "c.ini",
                  "[run]\nmode = figure1\nepsilon = 0.2\nreplicas = 2\n"
                  "horizon = 2.0\ngrid_points = 9\nseed = 1\n")
    out = str(tmp_path / "out")
    assert cli.main(["--config", path, "--out", out, "--quiet"]) == 0
    man = json.loads(open(os.path.join(out,
                                       "figure1_manifest.json")).read())["data"]
    assert set(man["panels"]) == {"explosive", "divergent", "bistable",
                                  "stable"}
    for regime, panel in man["panels"].items():
        assert panel["classified"] == regime
        for files in panel["files"].values():
            for f in files.values():
                assert os.path.exists(os.path.join(out, f))


def test_figure2_mode_smoke(tmp_path):
    path = _write(tmp_path, "c.ini",
                  "[run]\nmode = figure2\nepsilon = 0.1\nreplicas = 2\n"
                  "horizon = 3.0\ngrid_points = 7\nlimit_replicas = 8\n"
                  "include_continuous = false\nseed = 2\n")
    out = str(tmp_path / "out")
    assert cli.main(["--config", path, "--out", out, "--quiet"]) == 0
    for name in ("scaled_eps-0.1.csv", "limit_mc.csv", "limit_ar.csv",
                 "sd_inset.json"):
        assert os.path.exists(os.path.join(out, name)), name
    _, cols, rows = _read_csv(os.path.join(out, "limit_ar.csv"))
    assert cols == ["t", "mean_w", "sd_w", "se_w"]
    assert len(rows) == 7
