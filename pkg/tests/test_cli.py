import json
import os
import subprocess
import sys

import numpy as np
import pytest

from transfernet import data_path
from transfernet.cli import grid, run

FIG2 = data_path("fig2.json")
FIG5 = data_path("fig5.json")


def test_validate_prints_counts(capsys):
    assert run(["validate", FIG5]) == 0
    assert capsys.readouterr().out.strip() == "ok nodes=7 links=12 paths=9 transfers=2 ods=2"


def test_invalid_scenario_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    assert run(["validate", str(bad)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: invalid:") and err.count("\n") == 1
    assert run(["validate", str(tmp_path / "missing.json")]) == 1


def test_usage_errors(capsys):
    assert run([]) == 3
    assert run(["frobnicate"]) == 3
    assert run(["sweep", FIG2, "--param", "theta"]) == 3
    assert "error: usage:" in capsys.readouterr().err


def test_bad_step_is_usage_error(tmp_path):
    assert run(["sweep", FIG2, "--param", "theta", "--from", "0.1", "--to", "0.2", "--step", "0",
                "--out", str(tmp_path)]) == 3


def test_unknown_cap_is_invalid(tmp_path):
    assert run(["solve", FIG2, "--cap", "nope=3", "--out", str(tmp_path)]) == 1


def test_nonconvergence_exit_code(tmp_path, capsys):
    code = run(["solve", FIG5, "--cap", "bike_5=400", "--cap", "car_7=700", "--max-inner", "2",
                "--max-outer", "1", "--out", str(tmp_path)])
    assert code == 2
    assert "error: nonconvergence:" in capsys.readouterr().err
    assert json.loads((tmp_path / "run_meta.json").read_text())["converged"] is False


def test_solve_writes_state_and_meta(tmp_path):
    assert run(["solve", FIG5, "--out", str(tmp_path), "--theta", "0.2"]) == 0
    meta = json.loads((tmp_path / "run_meta.json").read_text())
    for key in ("command", "scenario_sha256", "seed", "behavior", "solver", "versions",
                "wall_time_s", "threads", "converged"):
        assert key in meta
    assert meta["behavior"]["theta"] == 0.2
    assert (tmp_path / "path_flows.csv").exists()


def test_two_point_theta_sweep(tmp_path):
    assert run(["sweep", FIG2, "--param", "theta", "--from", "0.5", "--to", "0.9", "--step", "0.4",
                "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "fig3a.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("theta,ttt_before,ttt_after")
    meta = json.loads((tmp_path / "run_meta.json").read_text())
    assert meta["values"] == [0.5, 0.9]


def test_design_command(tmp_path):
    assert run(["design", FIG5, "--population", "4", "--generations", "1",
                "--out", str(tmp_path)]) == 0
    best = json.loads((tmp_path / "best_design.json").read_text())
    assert best["G"] <= 22_500_000


def test_grid_is_inclusive():
    np.testing.assert_array_equal(grid(0.1, 0.9, 0.1), np.round(np.arange(1, 10) / 10, 10))
    assert list(grid(100, 2000, 50))[-1] == 2000


def _run_cli(args, cwd, threads):
    env = dict(os.environ, TRANSFERNET_THREADS=str(threads))
    subprocess.run([sys.executable, "-m", "transfernet.cli", *args], cwd=cwd, env=env, check=True,
                   capture_output=True)


@pytest.mark.parametrize("threads", [1, 3])
def test_outputs_are_byte_identical(tmp_path, threads):
    args = ["experiment", FIG2, "--name", "fig3b", "--from", "100", "--to", "400", "--step", "100"]
    _run_cli(args + ["--out", "a"], tmp_path, 1)
    _run_cli(args + ["--out", "b"], tmp_path, threads)
    assert (tmp_path / "a" / "fig3b.csv").read_bytes() == (tmp_path / "b" / "fig3b.csv").read_bytes()


def test_table1_reports_reference_gaps(tmp_path):
    assert run(["experiment", FIG2, "--name", "table1", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "run_meta.json").read_text())
    assert set(meta["calibration"]) >= {"params", "residual", "poor"}
    cmp = meta["after_vs_reference"]
    assert len(cmp["flow_rel_gap"]) == 3
    assert cmp["within_10pct"] or "note" in cmp
    rows = (tmp_path / "table1.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows] == ["scenario", "before", "after"]
