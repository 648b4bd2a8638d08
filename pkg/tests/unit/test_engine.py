import pytest
from engine import CHECKPOINT_MAGIC, MachineState, checkpoint, enumerate_policy_space, restore, simulate_segment
from models import (
    CheckpointFormatError, ConfigurationError, PolicyConfig, PrefetcherSpec, ReplacementSpec, TimingModel,
    ValidationError,
)
from traces import generate_trace, segment_trace

# every stall is charged in full so cycle counts are exact
FLAT_TIMING = TimingModel(base_cpi=1.0, l2_hit_penalty=12.0, mem_penalty=200.0, overlap=0.0)


@pytest.mark.unit
class TestSimulateSegment:
    """Unit tests for per-segment timing and statistics"""

    def test_all_hits_run_at_peak_ipc(self, small_hierarchy, demand_only_policy, default_timing, idle_segment):
        state = MachineState.fresh(demand_only_policy, small_hierarchy)
        simulate_segment(idle_segment(1), demand_only_policy, default_timing, state)
        result = simulate_segment(idle_segment(100), demand_only_policy, default_timing, state)
        assert result.ipc == pytest.approx(4.0)
        assert result.l1i.hits == 100

    def test_hundred_memory_misses(self, small_hierarchy, demand_only_policy, idle_segment, loads_segment):
        state = MachineState.fresh(demand_only_policy, small_hierarchy)
        simulate_segment(idle_segment(1), demand_only_policy, FLAT_TIMING, state)
        addrs = [0x100000 + 64 * i for i in range(100)]
        result = simulate_segment(loads_segment(addrs), demand_only_policy, FLAT_TIMING, state)
        assert result.cycles == pytest.approx(20100.0)
        assert result.ipc == pytest.approx(100 / 20100)
        assert result.l1d.misses == 100
        assert result.l2.misses == 100

    def test_l2_hit_charges_l2_penalty(self, small_hierarchy, demand_only_policy, idle_segment, loads_segment):
        state = MachineState.fresh(demand_only_policy, small_hierarchy)
        simulate_segment(idle_segment(1), demand_only_policy, FLAT_TIMING, state)
        # 16 lines overflow the 8-line L1D but fit the 64-line L2
        addrs = [0x100000 + 64 * i for i in range(16)]
        simulate_segment(loads_segment(addrs), demand_only_policy, FLAT_TIMING, state)
        result = simulate_segment(loads_segment(addrs[:4]), demand_only_policy, FLAT_TIMING, state)
        assert result.l2.hits == 4
        assert result.cycles == pytest.approx(4 + 4 * 12.0)

    def test_next_line_beats_no_prefetch_on_stride(self, small_hierarchy, default_timing, loads_segment):
        segment = loads_segment([0x200000 + 64 * i for i in range(500)])
        ipc = {}
        for policy_id in ("none/none/lru", "next_line/none/lru"):
            policy = PolicyConfig.parse(policy_id)
            state = MachineState.fresh(policy, small_hierarchy)
            ipc[policy_id] = simulate_segment(segment, policy, default_timing, state).ipc
        assert ipc["next_line/none/lru"] > ipc["none/none/lru"]

    @pytest.mark.parametrize("step", [4, 8, 16, 32, 64, 128])
    def test_ip_stride_covers_pure_stride_after_warmup(self, small_hierarchy, default_timing, loads_segment, step):
        policy = PolicyConfig.parse("ip_stride/i_next_line/lru")
        state = MachineState.fresh(policy, small_hierarchy)
        addrs = [0x300000 + step * i for i in range(8000)]
        simulate_segment(loads_segment(addrs[:4000]), policy, default_timing, state)
        result = simulate_segment(loads_segment(addrs[4000:], timestep=1), policy, default_timing, state)
        assert result.l1d.hits / result.l1d.accesses >= 0.9

    def test_stride_without_prefetch_misses_every_line(self, small_hierarchy, default_timing, loads_segment):
        policy = PolicyConfig.parse("none/i_next_line/lru")
        state = MachineState.fresh(policy, small_hierarchy)
        result = simulate_segment(loads_segment([0x300000 + 64 * i for i in range(4000)]), policy,
                                  default_timing, state)
        assert result.l1d.hits == 0

    def test_data_prefetcher_does_not_change_l1i(self, small_hierarchy, default_timing, stride_spec):
        segment = segment_trace(generate_trace(stride_spec), 2000)[0]
        l1i = []
        for policy_id in ("none/i_next_line/lru", "ip_stride/i_next_line/lru", "stream/i_next_line/lru"):
            policy = PolicyConfig.parse(policy_id)
            state = MachineState.fresh(policy, small_hierarchy)
            l1i.append(simulate_segment(segment, policy, default_timing, state).l1i)
        assert l1i[0] == l1i[1] == l1i[2]

    def test_ipc_bounded_by_base_cpi(self, small_hierarchy, default_timing, stride_spec):
        policy = PolicyConfig.parse("stream/i_next_2_line/srrip")
        state = MachineState.fresh(policy, small_hierarchy)
        for segment in segment_trace(generate_trace(stride_spec), 1000):
            result = simulate_segment(segment, policy, default_timing, state)
            assert 0 < result.ipc <= 1 / default_timing.base_cpi

    def test_higher_memory_penalty_never_raises_ipc(self, small_hierarchy, baseline_policy, stride_spec):
        segment = segment_trace(generate_trace(stride_spec), 3000)[1]
        ipcs = []
        for penalty in (50.0, 200.0, 800.0):
            state = MachineState.fresh(baseline_policy, small_hierarchy)
            timing = TimingModel(mem_penalty=penalty)
            ipcs.append(simulate_segment(segment, baseline_policy, timing, state).ipc)
        assert ipcs[0] >= ipcs[1] >= ipcs[2]

    def test_counters_are_consistent(self, small_hierarchy, baseline_policy, default_timing, stride_spec):
        segment = segment_trace(generate_trace(stride_spec), 6000)[0]
        state = MachineState.fresh(baseline_policy, small_hierarchy)
        result = simulate_segment(segment, baseline_policy, default_timing, state)
        memory_ops = int((segment.records.kinds <= 1).sum())
        assert result.l1i.accesses == len(segment)
        assert result.l1d.accesses == memory_ops
        assert result.l2.accesses == result.l1i.misses + result.l1d.misses
        assert result.l1d.prefetch_hits <= result.l1d.prefetch_fills

    def test_state_continues_across_segments(self, small_hierarchy, demand_only_policy, default_timing, loads_segment):
        segment = loads_segment([0x1000, 0x1040])
        state = MachineState.fresh(demand_only_policy, small_hierarchy)
        cold = simulate_segment(segment, demand_only_policy, default_timing, state)
        warm = simulate_segment(segment, demand_only_policy, default_timing, state)
        assert warm.ipc > cold.ipc
        assert state.instructions == 4

    def test_mismatched_policy_raises(self, small_hierarchy, baseline_policy, demand_only_policy, default_timing,
                                      idle_segment):
        state = MachineState.fresh(baseline_policy, small_hierarchy)
        with pytest.raises(ConfigurationError):
            simulate_segment(idle_segment(4), demand_only_policy, default_timing, state)

    def test_warmup_is_excluded(self, small_hierarchy, demand_only_policy, default_timing, idle_segment):
        state = MachineState.fresh(demand_only_policy, small_hierarchy)
        result = simulate_segment(idle_segment(50), demand_only_policy, default_timing, state, warmup=10)
        assert result.instructions == 40
        # the only L1I miss happened during warmup
        assert result.ipc == pytest.approx(4.0)
        assert state.instructions == 50

    @pytest.mark.parametrize("warmup", [-1, 50, 60])
    def test_warmup_must_leave_measured_records(self, small_hierarchy, demand_only_policy, default_timing,
                                                idle_segment, warmup):
        state = MachineState.fresh(demand_only_policy, small_hierarchy)
        with pytest.raises(ValidationError):
            simulate_segment(idle_segment(50), demand_only_policy, default_timing, state, warmup=warmup)


@pytest.mark.unit
class TestPolicySpace:

    def test_two_by_two_by_two(self):
        space = enumerate_policy_space(
            [PrefetcherSpec("none"), PrefetcherSpec("ip_stride")],
            [PrefetcherSpec("none"), PrefetcherSpec("i_next_line")],
            [ReplacementSpec("lru"), ReplacementSpec("drrip")],
        )
        ids = [p.id for p in space]
        assert len(ids) == 8
        assert ids == sorted(ids)
        assert "ip_stride/i_next_line/drrip" in ids

    def test_single_point(self):
        space = enumerate_policy_space([PrefetcherSpec("ip_stride")], [PrefetcherSpec("i_next_line")],
                                       [ReplacementSpec("lru")])
        assert [p.id for p in space] == ["ip_stride/i_next_line/lru"]

    def test_three_by_two_by_two(self):
        space = enumerate_policy_space(
            [PrefetcherSpec("none"), PrefetcherSpec("next_line"), PrefetcherSpec("stream")],
            [PrefetcherSpec("none"), PrefetcherSpec("i_next_2_line")],
            [ReplacementSpec("srrip"), ReplacementSpec("fifo")],
        )
        assert len(space) == 12
        assert len({p.id for p in space}) == 12

    def test_duplicate_option_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            enumerate_policy_space([PrefetcherSpec("none"), PrefetcherSpec("none")],
                                   [PrefetcherSpec("none")], [ReplacementSpec("lru")])

    def test_empty_option_list_rejected(self):
        with pytest.raises(ValidationError):
            enumerate_policy_space([], [PrefetcherSpec("none")], [ReplacementSpec("lru")])


@pytest.mark.unit
class TestCheckpoint:
    """Unit tests for machine-state checkpoint blobs"""

    @pytest.mark.parametrize("policy_id", [
        "ip_stride/i_next_line/lru",
        "stream/i_next_2_line/drrip",
        "next_line/none/random",
        "none/i_next_line/srrip",
    ])
    def test_restored_state_continues_identically(self, small_hierarchy, default_timing, stride_spec, policy_id):
        policy = PolicyConfig.parse(policy_id)
        first, second = segment_trace(generate_trace(stride_spec), 3000)
        state = MachineState.fresh(policy, small_hierarchy)
        simulate_segment(first, policy, default_timing, state)
        resumed = restore(checkpoint(state))
        expected = simulate_segment(second, policy, default_timing, state)
        actual = simulate_segment(second, policy, default_timing, resumed)
        assert actual == expected

    def test_fresh_state_roundtrip(self, small_hierarchy, baseline_policy):
        blob = checkpoint(MachineState.fresh(baseline_policy, small_hierarchy))
        state = restore(blob)
        assert state.policy == baseline_policy
        assert state.hierarchy == small_hierarchy
        assert state.instructions == 0
        assert checkpoint(state) == blob

    def test_checkpoint_is_deterministic(self, small_hierarchy, baseline_policy, default_timing, loads_segment):
        def run():
            state = MachineState.fresh(baseline_policy, small_hierarchy)
            simulate_segment(loads_segment([0x1000 + 192 * i for i in range(50)]), baseline_policy,
                             default_timing, state)
            return checkpoint(state)

        assert run() == run()

    def test_bad_magic(self, small_hierarchy, baseline_policy):
        blob = checkpoint(MachineState.fresh(baseline_policy, small_hierarchy))
        with pytest.raises(CheckpointFormatError):
            restore(b"XXXX" + blob[len(CHECKPOINT_MAGIC):])

    @pytest.mark.parametrize("keep", [0, 3, 10, -1, -20])
    def test_truncated_blob(self, small_hierarchy, baseline_policy, keep):
        blob = checkpoint(MachineState.fresh(baseline_policy, small_hierarchy))
        with pytest.raises(CheckpointFormatError):
            restore(blob[:keep])

    def test_flipped_byte_fails_checksum(self, small_hierarchy, baseline_policy):
        blob = bytearray(checkpoint(MachineState.fresh(baseline_policy, small_hierarchy)))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(CheckpointFormatError, match="checksum"):
            restore(bytes(blob))
