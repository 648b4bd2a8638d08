"""Full-scale checks on the shipped demo configuration; run with `pytest -m slow`."""
import os
import time
from pathlib import Path

import pytest
from analytics import best_k_subset, best_static, compute_loss, compute_oracle, summarize_policy
from app import cli_main
from config import DEFAULT_HIERARCHY, DEFAULT_TIMING, load_plan, load_sources
from harness import measure_truncation_bias, run_experiment
from models import PolicyConfig
from traces import generate_trace

CONFIGS = Path(__file__).resolve().parents[2] / "configs"
DEMO_PLAN = CONFIGS / "demo_plan.yaml"


@pytest.fixture(scope="module")
def demo_matrix():
    return run_experiment(load_plan(DEMO_PLAN), workers=4)


@pytest.mark.performance
@pytest.mark.slow
@pytest.mark.acceptance
class TestDemoSuite:
    """Qualitative headroom analogue on the demo suite"""

    def test_demo_shape(self, demo_matrix):
        assert len(demo_matrix.benchmarks) >= 6
        assert demo_matrix.n_timesteps == 10 * len(demo_matrix.benchmarks)
        assert len(demo_matrix.policies) == 8

    def test_best_static_is_not_always_optimal(self, demo_matrix):
        oracle = compute_oracle(demo_matrix)
        best = best_static(demo_matrix)
        summary = summarize_policy(compute_loss(demo_matrix, oracle, best), oracle.winner_sets)
        assert summary.match_rate_pct < 100.0

    def test_several_policies_win_somewhere(self, demo_matrix):
        oracle = compute_oracle(demo_matrix)
        assert len(set().union(*oracle.winner_sets)) >= 2

    def test_best_pair_halves_static_loss(self, demo_matrix):
        oracle = compute_oracle(demo_matrix)
        static_loss = compute_loss(demo_matrix, oracle, best_static(demo_matrix)).loss.mean()
        pair = best_k_subset(demo_matrix, oracle, 2)
        assert pair.mean_loss_pct <= 0.5 * static_loss

    def test_recorded_headline_numbers(self, demo_matrix):
        # the values published in docs/RESULTS.md
        oracle = compute_oracle(demo_matrix)
        best = best_static(demo_matrix)
        summary = summarize_policy(compute_loss(demo_matrix, oracle, best), oracle.winner_sets)
        pair = best_k_subset(demo_matrix, oracle, 2)
        assert best == "ip_stride/i_next_2_line/drrip"
        assert summary.mean_loss_pct == pytest.approx(22.70, abs=0.005)
        assert summary.match_rate_pct == pytest.approx(41.67, abs=0.005)
        assert pair.policies == ("ip_stride/i_next_2_line/drrip", "next_line/i_next_2_line/drrip")
        assert pair.mean_loss_pct == pytest.approx(0.36, abs=0.005)
        assert pair.match_rate_pct == pytest.approx(90.0, abs=0.05)
        assert set().union(*oracle.winner_sets) == set(demo_matrix.policies)

    @pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="the 5 minute budget assumes 4 workers on 4 cores")
    def test_demo_runtime(self):
        start = time.perf_counter()
        run_experiment(load_plan(DEMO_PLAN), workers=4)
        duration = time.perf_counter() - start
        assert duration < 300.0, f"Demo suite took {duration:.1f}s, exceeded 5 min"


@pytest.mark.performance
@pytest.mark.slow
@pytest.mark.acceptance
def test_truncation_bias_shrinks_with_chunk_length():
    start = time.perf_counter()
    source, = load_sources(CONFIGS / "history_sensitive.yaml")
    points = measure_truncation_bias(generate_trace(source.synthetic), PolicyConfig.parse("ip_stride/i_next_line/lru"),
                                     DEFAULT_TIMING, [20_000, 200_000], DEFAULT_HIERARCHY)
    gaps = {p.chunk_len: p.gap_pct for p in points}
    assert gaps[200_000] <= gaps[20_000]
    assert time.perf_counter() - start < 120.0


@pytest.mark.performance
@pytest.mark.slow
@pytest.mark.acceptance
def test_demo_outputs_are_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    for name, workers in (("serial", "0"), ("parallel", "4")):
        assert cli_main(["run", "--plan", str(DEMO_PLAN), "--out", str(tmp_path / f"{name}.csv"),
                         "--workers", workers]) == 0
        assert cli_main(["analyze", "--matrix", str(tmp_path / f"{name}.csv"), "--plan", str(DEMO_PLAN),
                         "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "serial.csv").read_bytes() == (tmp_path / "parallel.csv").read_bytes()
    for path in sorted((tmp_path / "serial").rglob("*")):
        if path.is_file():
            twin = tmp_path / "parallel" / path.relative_to(tmp_path / "serial")
            assert path.read_bytes() == twin.read_bytes(), path.name
