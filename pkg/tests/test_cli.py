from __future__ import annotations

import csv
import json

import pytest

from mppi_dbas import config as cfg
from mppi_dbas.cli import main

FREE_YAML = """\
schema_version: 1
path: {line_length: 20.0, radius: 10.0, ref_speed: 5.0, spacing: 1.0}
obstacles: []
controller: {num_samples: 128, horizon: 20, lam: 20.0}
limits: {max_steps: 150}
initial_state: {x: 0.0, y: 0.0, theta: 0.0, v: 5.0}
seeds: [0, 1, 2]
output_dir: unused
"""


@pytest.fixture
def free_config(tmp_path):
    path = tmp_path / "free.yaml"
    path.write_text(FREE_YAML)
    return path


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_run_obstacle_free_success(tmp_path, free_config):
    out = tmp_path / "run"
    assert main(["run", str(free_config), "--seed", "7", "--out", str(out)]) == 0
    outcome = json.loads((out / "outcome.json").read_text())
    assert outcome["class"] == "Success"
    assert outcome["seed"] == 7
    header = _rows(out / "trajectory.csv")[0]
    assert header == ["step", "t", "x", "y", "theta", "v", "steer", "accel", "w", "s_e", "c_b_star", "min_margin", "rho"]
    assert cfg.load(out / "config.yaml") == cfg.load(free_config)


def test_run_twice_byte_identical(tmp_path, free_config):
    for name in ("a", "b"):
        assert main(["run", str(free_config), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    for f in ("trajectory.csv", "outcome.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_output_dir_from_environment(tmp_path, free_config, monkeypatch):
    monkeypatch.setenv("MPPI_DBAS_OUT", str(tmp_path / "env"))
    assert main(["run", str(free_config)]) == 0
    assert (tmp_path / "env" / "trajectory.csv").is_file()


def test_malformed_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\ncontroller:\n  horizon: 30\n  lambda: 1.0\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "bad.yaml:4" in err and "controller.lambda" in err


def test_missing_config_exit_3(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 3


def test_unwritable_output_exit_3(tmp_path, free_config):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", str(free_config), "--out", str(blocker / "sub")]) == 3


def test_bad_mode_list_exit_2(tmp_path, free_config):
    assert main(["batch", str(free_config), "--modes", "dbas-adaptive,nope", "--out", str(tmp_path / "b")]) == 2


def test_bad_workers_exit_2(tmp_path, free_config):
    assert main(["run", str(free_config), "--workers", "0", "--out", str(tmp_path / "o")]) == 2


def test_export_plots_single_run(tmp_path, free_config):
    out = tmp_path / "run"
    assert main(["run", str(free_config), "--seed", "1", "--out", str(out)]) == 0
    assert main(["export-plots", str(out), "--out", str(tmp_path / "plots")]) == 0
    steps = json.loads((out / "outcome.json").read_text())["steps"]
    path_rows = _rows(tmp_path / "plots" / "path.csv")
    assert len(path_rows) - 1 == steps + 1
    assert (tmp_path / "plots" / "reference.csv").is_file()
    assert len(_rows(tmp_path / "plots" / "obstacles.csv")) == 1


def test_batch_and_bands(tmp_path, free_config):
    out = tmp_path / "batch"
    assert main(["batch", str(free_config), "--modes", "dbas-adaptive,dbas-fixed", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    modes = {m["mode"]: m for m in summary["modes"]}
    assert set(modes) == {"dbas-adaptive", "dbas-fixed"}
    for m in modes.values():
        assert m["success"] + m["fail_stop"] + m["fail_collision"] == 3
        assert {"avg_vel", "avg_pos_error", "avg_vel_std", "avg_pos_error_std"} <= set(m)
    assert (out / "dbas-fixed" / "seed_002" / "trajectory.csv").is_file()

    assert main(["export-plots", str(out)]) == 0
    header = _rows(out / "plots" / "bands_dbas-adaptive.csv")[0]
    for field in ("v", "steer", "w"):
        assert f"{field}_mean" in header and f"{field}_std" in header
    runs = {(r[0], r[1]) for r in _rows(out / "plots" / "path.csv")[1:]}
    assert len(runs) == 6


def test_batch_is_deterministic(tmp_path, free_config):
    for name in ("a", "b"):
        assert main(["batch", str(free_config), "--out", str(tmp_path / name), "--workers", "1" if name == "a" else "3"]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    for f in sorted(a.rglob("trajectory.csv")):
        assert f.read_bytes() == (b / f.relative_to(a)).read_bytes()


def test_export_plots_missing_inputs_exit_3(tmp_path):
    assert main(["export-plots", str(tmp_path / "missing")]) == 3
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["export-plots", str(empty)]) == 3
    (empty / "config.yaml").write_text(FREE_YAML)
    assert main(["export-plots", str(empty)]) == 3
