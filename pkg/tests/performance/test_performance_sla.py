import itertools
import time

import pytest
import numpy as np
from analytics import ZERO_LOSS_PCT, best_k_subset, compute_loss_table, compute_oracle
from caches import DRRIPPolicy, PSEL_MAX, PSEL_MID, Cache, cache_access, drrip_duel_update, lru_reference_hits
from harness import IpcMatrix
from models import AccessOutcome, CacheGeometry
from prefetchers import IpStridePrefetcher, observe_access


def random_matrices(count=200):
    """Matrices of up to 6 benchmarks x 8 timesteps x 6 policies, with a coarse grid so ties occur"""
    rng = np.random.default_rng(2024)
    for _ in range(count):
        benchmarks = int(rng.integers(1, 7))
        timesteps = int(rng.integers(1, 9))
        policies = int(rng.integers(1, 7))
        keys = [(f"b{b}", t) for b in range(benchmarks) for t in range(timesteps)]
        values = rng.integers(1, 40, size=(len(keys), policies)) / 10.0
        yield IpcMatrix(keys, [f"p{j}" for j in range(policies)], values)


@pytest.mark.performance
@pytest.mark.sla
class TestPerformanceSLA:
    """Correctness suites that must also finish inside their time budgets"""

    def test_oracle_and_loss_suite_sla(self):
        """Oracle dominance and loss recomputation on 200 matrices in under 10s"""
        start = time.perf_counter()
        for matrix in random_matrices():
            oracle = compute_oracle(matrix)
            table = compute_loss_table(matrix, oracle)
            assert np.all(oracle.oracle_ipc[:, None] >= matrix.ipc)
            assert np.all(table.loss >= 0.0)
            assert np.array_equal(table.loss == 0.0, oracle.winners)
            for i, j in itertools.product(range(matrix.n_timesteps), range(len(matrix.policies))):
                best = max(matrix.ipc[i].tolist())
                assert table.loss[i, j] == pytest.approx((best - matrix.ipc[i, j]) / best * 100.0, abs=1e-9)
        duration = time.perf_counter() - start
        assert duration < 10.0, f"Oracle suite took {duration:.2f}s, exceeded 10s SLA"

    def test_subset_selection_suite_sla(self):
        """best_k_subset against exhaustive enumeration on 200 matrices in under 30s"""
        start = time.perf_counter()
        for matrix in random_matrices():
            oracle = compute_oracle(matrix)
            n = len(matrix.policies)
            previous = None
            for k in range(1, min(3, n) + 1):
                selection = best_k_subset(matrix, oracle, k)
                brute = min(
                    float(((oracle.oracle_ipc - matrix.ipc[:, list(c)].max(axis=1)) / oracle.oracle_ipc).mean()
                          * 100.0)
                    for c in itertools.combinations(range(n), k))
                assert selection.mean_loss_pct == pytest.approx(brute, abs=1e-9)
                if previous is not None:
                    assert selection.mean_loss_pct <= previous + 1e-12
                previous = selection.mean_loss_pct
            full = best_k_subset(matrix, oracle, n)
            assert full.mean_loss_pct == 0.0
            assert full.match_rate_pct == 100.0
            assert np.all(full.loss_row.loss <= ZERO_LOSS_PCT)
        duration = time.perf_counter() - start
        assert duration < 30.0, f"Subset suite took {duration:.2f}s, exceeded 30s SLA"

    def test_lru_equivalence_sla(self):
        """100 random traces of 10^4 accesses: simulator LRU equals the stack-distance reference, under 10s"""
        rng = np.random.default_rng(99)
        start = time.perf_counter()
        for i in range(100):
            geometry = CacheGeometry(int(2 ** rng.integers(0, 5)), int(rng.integers(1, 9)))
            addrs = (rng.integers(0, 512, size=10_000) * 64).tolist()
            cache = Cache("l1d", geometry, "lru")
            hits = sum(cache_access(cache, a).hit for a in addrs)
            assert hits == lru_reference_hits(addrs, geometry), f"trace {i} diverged"
        duration = time.perf_counter() - start
        assert duration < 10.0, f"LRU equivalence took {duration:.2f}s, exceeded 10s SLA"

    def test_hand_traced_policy_conformance(self):
        one_set = CacheGeometry(1, 2)
        a, b, c = 0x0, 0x1000, 0x2000

        lru = Cache("l2", one_set, "lru")
        for addr in (a, b, a):
            cache_access(lru, addr)
        assert cache_access(lru, c) == AccessOutcome(False, b)

        srrip = Cache("l2", one_set, "srrip")
        cache_access(srrip, a)
        cache_access(srrip, b)
        assert cache_access(srrip, c) == AccessOutcome(False, a)

        stride = IpStridePrefetcher(64, confidence_threshold=2, degree=1)
        emitted = [observe_access(stride, 0x400000, addr, False) for addr in (0x100, 0x140, 0x180)]
        assert emitted == [[], [], [0x1C0]]

        drrip = DRRIPPolicy(CacheGeometry(1024, 8))
        assert drrip_duel_update(drrip, 31, False) == PSEL_MID - 1
        drrip.psel = PSEL_MAX
        assert [drrip_duel_update(drrip, 0, False) for _ in range(3)] == [PSEL_MAX] * 3
