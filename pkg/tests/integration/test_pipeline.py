from dataclasses import replace

import pytest
import numpy as np
from app import cli_main
from config import WORKERS_ENV, load_plan
from harness import load_matrix, run_experiment


@pytest.mark.integration
class TestDeterminism:
    """Repeated and parallel runs must produce identical artifacts"""

    def test_serial_and_parallel_matrices_are_identical(self, small_plan, tmp_path):
        serial = tmp_path / "serial.csv"
        parallel = tmp_path / "parallel.csv"
        assert cli_main(["run", "--plan", str(small_plan), "--out", str(serial), "--workers", "0"]) == 0
        assert cli_main(["run", "--plan", str(small_plan), "--out", str(parallel), "--workers", "3"]) == 0
        assert serial.read_bytes() == parallel.read_bytes()

    def test_workers_from_environment(self, small_plan, tmp_path, monkeypatch):
        monkeypatch.setenv(WORKERS_ENV, "2")
        env_run = tmp_path / "env.csv"
        cli_main(["run", "--plan", str(small_plan), "--out", str(env_run)])
        monkeypatch.delenv(WORKERS_ENV)
        serial_run = tmp_path / "serial.csv"
        cli_main(["run", "--plan", str(small_plan), "--out", str(serial_run)])
        assert env_run.read_bytes() == serial_run.read_bytes()

    def test_repeated_runs_are_byte_identical(self, small_plan, tmp_path):
        for name in ("a.csv", "b.csv"):
            cli_main(["run", "--plan", str(small_plan), "--out", str(tmp_path / name)])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_repeated_analysis_is_byte_identical(self, small_plan, tmp_path, pinned_clock):
        matrix = tmp_path / "matrix.csv"
        cli_main(["run", "--plan", str(small_plan), "--out", str(matrix)])
        for name in ("r1", "r2"):
            cli_main(["analyze", "--matrix", str(matrix), "--out", str(tmp_path / name)])
        first = sorted(p.relative_to(tmp_path / "r1") for p in (tmp_path / "r1").rglob("*") if p.is_file())
        second = sorted(p.relative_to(tmp_path / "r2") for p in (tmp_path / "r2").rglob("*") if p.is_file())
        assert first == second
        for rel in first:
            assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes()


@pytest.mark.integration
class TestPipeline:

    def test_matrix_file_matches_in_memory_run(self, small_plan, tmp_path):
        out = tmp_path / "matrix.csv"
        cli_main(["run", "--plan", str(small_plan), "--out", str(out)])
        assert load_matrix(out) == run_experiment(load_plan(small_plan))

    def test_cold_chunk_mode_differs_only_after_first_timestep(self, small_plan, tmp_path):
        plan = load_plan(small_plan)
        continuous = run_experiment(plan)
        cold = run_experiment(replace(plan, mode="cold_chunk"))
        first = [i for i, (_, t) in enumerate(continuous.keys) if t == 0]
        assert np.array_equal(continuous.ipc[first], cold.ipc[first])

    def test_generated_traces_feed_a_trace_plan(self, small_plan, tmp_path):
        cli_main(["gen", "--spec", str(small_plan), "--out", str(tmp_path / "traces")])
        trace_plan = tmp_path / "trace_plan.yaml"
        trace_plan.write_text(
            small_plan.read_text(encoding="utf-8").split("benchmarks:")[0]
            + "benchmarks:\n"
            + "- {id: scan, trace: traces/scan.trace}\n"
            + "- {id: chase, trace: traces/chase.trace}\n",
            encoding="utf-8")
        assert run_experiment(load_plan(trace_plan)) == run_experiment(load_plan(small_plan))

    def test_external_matrix_is_analyzed(self, tmp_path):
        rows = ["benchmark,timestep,policy,ipc"]
        for bench in ("600.perlbench", "605.mcf"):
            for t in range(3):
                rows.append(f"{bench},{t},champsim_a,{1.0 + 0.1 * t}")
                rows.append(f"{bench},{t},champsim_b,{1.15 - 0.05 * t}")
        matrix = tmp_path / "external.csv"
        matrix.write_text("\n".join(rows) + "\n", encoding="utf-8")
        assert cli_main(["analyze", "--matrix", str(matrix), "--out", str(tmp_path / "r"),
                         "--baseline", "champsim_a"]) == 0
        assert (tmp_path / "r" / "headroom.csv").exists()
