import pytest
import yaml


@pytest.fixture
def small_plan(tmp_path):
    """Two synthetic benchmarks x 3 timesteps x 4 policies on a tiny hierarchy"""
    raw = {
        "chunk_len": 2000,
        "baseline": "ip_stride/i_next_line/lru",
        "hierarchy": {
            "l1i": {"sets": 4, "ways": 2},
            "l1d": {"sets": 4, "ways": 2},
            "l2": {"sets": 16, "ways": 4},
        },
        "policies": {"l1d": ["ip_stride", "next_line"], "l1i": ["i_next_line"], "l2": ["lru", "drrip"]},
        "benchmarks": [
            {"id": "scan", "synthetic": {"seed": 1, "phases": [
                {"pattern": "stride", "length": 6000, "load_fraction": 0.6, "step": 192}]}},
            {"id": "chase", "synthetic": {"seed": 2, "phases": [
                {"pattern": "chase", "length": 6500, "load_fraction": 0.5, "permutation_size": 128}]}},
        ],
    }
    path = tmp_path / "plan.yaml"
    path.write_text(yaml.safe_dump(raw, sort_keys=False), encoding="utf-8")
    return path


@pytest.fixture
def pinned_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
