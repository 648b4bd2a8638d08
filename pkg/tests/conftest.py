import pytest
import sys
import os

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from harness import IpcMatrix
from models import (
    LOAD, OTHER, CacheGeometry, Hierarchy, PhaseSpec, PolicyConfig, Segment, SyntheticSpec, TimingModel,
    Trace,
)


@pytest.fixture
def small_hierarchy():
    """A tiny hierarchy so unit tests exercise evictions quickly"""
    return Hierarchy(
        l1i=CacheGeometry(sets=4, ways=2, line_size=64),
        l1d=CacheGeometry(sets=4, ways=2, line_size=64),
        l2=CacheGeometry(sets=16, ways=4, line_size=64),
    )


@pytest.fixture
def default_timing():
    return TimingModel()


@pytest.fixture
def baseline_policy():
    """The naive baseline: IP-stride prefetching with LRU replacement"""
    return PolicyConfig.parse("ip_stride/i_next_line/lru")


@pytest.fixture
def demand_only_policy():
    return PolicyConfig.parse("none/none/lru")


@pytest.fixture
def stride_spec():
    """Two phases: a stride scan and a small random working set"""
    return SyntheticSpec(seed=7, phases=(
        PhaseSpec("stride", 3000, 0.5, region_base=0x10000, step=64),
        PhaseSpec("random_ws", 3000, 0.5, region_base=0x80000, working_set_bytes=4096),
    ))


@pytest.fixture
def make_segment():
    """Build a Segment from (pc, kind, addr) rows"""
    def _make(rows, benchmark_id="bench", timestep=0):
        pcs = [r[0] for r in rows]
        kinds = [r[1] for r in rows]
        addrs = [r[2] for r in rows]
        return Segment(benchmark_id, timestep, Trace.from_columns(pcs, kinds, addrs))
    return _make


@pytest.fixture
def loads_segment(make_segment):
    """Loads from a single pc over `addrs`"""
    def _make(addrs, pc=0x400000, benchmark_id="bench", timestep=0):
        return make_segment([(pc, LOAD, a) for a in addrs], benchmark_id, timestep)
    return _make


@pytest.fixture
def idle_segment(make_segment):
    """`count` non-memory records over one instruction line"""
    def _make(count, pc=0x400000):
        return make_segment([(pc, OTHER, 0)] * count)
    return _make


@pytest.fixture
def matrix_factory():
    """Build an IpcMatrix from a {benchmark: [[ipc per policy] per timestep]} mapping"""
    def _make(cells, policies):
        keys = []
        rows = []
        for benchmark, timesteps in cells.items():
            for t, row in enumerate(timesteps):
                keys.append((benchmark, t))
                rows.append(row)
        return IpcMatrix(keys, policies, np.array(rows, dtype=np.float64))
    return _make


@pytest.fixture
def random_matrix():
    """Random matrix with IPCs drawn from a small grid so ties actually happen"""
    def _make(seed, benchmarks=6, timesteps=8, policies=6, grid=None):
        rng = np.random.default_rng(seed)
        values = rng.integers(1, grid or 1000, size=(benchmarks * timesteps, policies)) / 250.0
        keys = [(f"b{b}", t) for b in range(benchmarks) for t in range(timesteps)]
        ids = [f"p{j}" for j in range(policies)]
        return IpcMatrix(keys, ids, values)
    return _make


@pytest.fixture
def toy_matrix(matrix_factory):
    """1 benchmark x 2 timesteps x 2 policies"""
    return matrix_factory({"bench": [[1.0, 1.2], [1.5, 1.1]]}, ["pa", "pb"])
