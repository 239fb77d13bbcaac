import json
import subprocess
import sys

import pytest

from coordcond.harness import io
from coordcond.harness.cli import EXIT_OK, EXIT_SOLVER, EXIT_USAGE, main


class TestCommands:
    def test_list(self, capsys):
        assert main(["list"]) == EXIT_OK
        out = capsys.readouterr().out
        for name in ("rod-impulse", "stretch-resolution", "basis-noise", "spring-coupling"):
            assert name in out

    def test_run_writes_trace(self, tmp_path, capsys):
        assert main(["run", "rod-impulse", "--solver", "cc", "--out-dir", str(tmp_path)]) == EXIT_OK
        trace = tmp_path / "traces" / "cc.csv"
        assert trace.exists()
        assert trace.read_text().splitlines()[0] == "iteration,energy,grad_norm,residual,step_norm,alpha"
        assert len(io.read_trace(trace)["iteration"]) == 2
        heat = (tmp_path / "heatmaps" / "cc.csv").read_text().splitlines()
        assert len(heat) == 2 and len(heat[0].split(",")) == 100
        assert capsys.readouterr().out.startswith(",".join(io.SUMMARY_COLUMNS))

    def test_run_defaults_to_cc(self, tmp_path):
        assert main(["run", "basis-noise", "--out-dir", str(tmp_path)]) == EXIT_OK
        (row,) = io.read_summary(tmp_path / "summary.csv")
        assert row["solver"] == "cc" and row["iterations"] == "1"

    def test_compare_one_row_per_solver_and_grid(self, tmp_path):
        assert main(["compare", "stretch-resolution", "--max-iters", "15", "--out-dir", str(tmp_path)]) == EXIT_OK
        rows = io.read_summary(tmp_path / "summary.csv")
        pairs = [(r["solver"], r["sweep_value"]) for r in rows]
        assert len(pairs) == len(set(pairs)) == 4 * 7
        assert {r["sweep_value"] for r in rows} == {"5", "9", "13", "17", "21", "25", "29"}

    def test_sweep_values_and_emit(self, tmp_path):
        code = main(["sweep", "rod-impulse", "--values", "10,100", "--solver", "cc", "--out-dir", str(tmp_path),
                     "--emit", "csv", "json", "svg", "--timing"])
        assert code == EXIT_OK
        rows = io.read_summary(tmp_path / "summary.csv")
        assert [r["sweep_value"] for r in rows] == ["10", "100"]
        assert all(float(r["wall_ms"]) > 0 for r in rows)
        assert json.loads((tmp_path / "summary.json").read_text())["axis"] == "young"
        assert (tmp_path / "figures" / "iterations.svg").exists()

    def test_same_seed_byte_identical(self, tmp_path):
        args = ["sweep", "basis-noise", "--values", "0.001,0.01", "--seed", "5", "--max-iters", "50"]
        assert main(args + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--out-dir", str(tmp_path / "b")]) == EXIT_OK
        for rel in ("summary.csv", "traces/cc_sigma0.001_seed5.csv", "traces/cc-line-search_sigma0.01_seed7.csv"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_scene_file_target(self, tmp_path):
        scene = {"mesh": {"type": "rod", "n": 8}, "bc": {"pins": [{"vertices": "left"},
                 {"vertices": "right", "offset": [0.2]}]}}
        path = tmp_path / "bar.json"
        path.write_text(json.dumps(scene))
        assert main(["compare", str(path), "--out-dir", str(tmp_path / "out")]) == EXIT_OK
        rows = io.read_summary(tmp_path / "out" / "summary.csv")
        assert [r["solver"] for r in rows] == ["newton", "cd", "jgs2", "cc"]
        assert {r["scenario"] for r in rows} == {"bar"}


    def test_converged_at_start_gives_empty_heatmap(self, tmp_path):
        path = tmp_path / "still.json"
        path.write_text(json.dumps({"mesh": {"type": "rod", "n": 5}, "bc": {"pins": [{"vertices": "left"}]}}))
        assert main(["run", str(path), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
        assert (tmp_path / "o" / "heatmaps" / "cc.csv").read_text().splitlines() == ["v0,v1,v2,v3"]


class TestExitCodes:
    @pytest.mark.parametrize("argv", [
        ["run", "no-such-scenario"],
        ["run", "rod-impulse", "--bogus"],
        ["frobnicate"],
        [],
        ["sweep", "spring-coupling"],
        ["sweep", "rod-impulse", "--values", "a,b"],
        ["run", "rod-impulse", "--solver", "lbfgs"],
        ["run", "rod-impulse", "--max-iters", "0"],
        ["run", "rod-impulse", "--emit", "png"],
    ])
    def test_usage_errors(self, argv, tmp_path, capsys):
        assert main(argv + ["--out-dir", str(tmp_path)] if argv[:1] in (["run"], ["sweep"]) else argv) == EXIT_USAGE
        assert "error" in capsys.readouterr().err

    def test_unknown_scenario_lists_available(self, capsys):
        assert main(["compare", "nope"]) == EXIT_USAGE
        assert "cantilever-staleness" in capsys.readouterr().err

    def test_solver_failure(self, tmp_path, capsys):
        # an unpinned quasistatic bar has rigid-body null modes
        path = tmp_path / "loose.json"
        path.write_text(json.dumps({"mesh": {"type": "rod", "n": 5}, "gravity": [1.0]}))
        assert main(["run", str(path), "--solver", "newton", "--tol", "1e-12", "--out-dir", str(tmp_path / "o")]) == EXIT_SOLVER
        assert "solver failure" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "coordcond.harness.cli", "list"], capture_output=True, text=True)
        assert proc.returncode == 0 and "buckling" in proc.stdout
