"""Per-segment simulation, the policy space, and machine-state checkpoints.

Checkpoint blob layout (version 1, all integers little-endian):

    4 bytes   magic b"PHCK"
    u16       version
    u32       length L of the configuration JSON
    L bytes   canonical JSON {"hierarchy": ..., "policy": ...} (sorted keys, UTF-8)
    u32       section count S
    S times:  u32 word count W, then W x u64 words
              sections in order: l1i, l1d, l2, l1d prefetcher, l1i prefetcher, core
    u32       CRC-32 of every preceding byte
"""
import itertools
import json
import logging
import struct
import zlib
from dataclasses import dataclass

from caches import Cache
from models import (
    STORE, CheckpointFormatError, ConfigurationError, Hierarchy, PolicyConfig, SegmentResult,
    ValidationError,
)
from prefetchers import issue_prefetches, make_prefetcher

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PHCK"
CHECKPOINT_VERSION = 1
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")
_U64 = struct.Struct("<Q")


@dataclass
class MachineState:
    """
    Everything a simulation carries from one segment to the next.

    Attributes:
        policy (PolicyConfig): The policy point this state was built for.
        hierarchy (Hierarchy): Cache geometries.
        l1i, l1d, l2 (Cache): The three caches; L1s are LRU, L2 follows the policy.
        l1d_prefetcher, l1i_prefetcher: Prefetcher state machines.
        instructions (int): Instructions simulated so far.
        cycles (float): Cycles charged so far.
        last_fetch_line (int | None): Last instruction line looked up in L1I.
    """

    policy: PolicyConfig
    hierarchy: Hierarchy
    l1i: Cache
    l1d: Cache
    l2: Cache
    l1d_prefetcher: object
    l1i_prefetcher: object
    instructions: int = 0
    cycles: float = 0.0
    last_fetch_line: object = None

    @classmethod
    def fresh(cls, policy, hierarchy):
        hierarchy.validate()
        policy.validate()
        return cls(
            policy=policy,
            hierarchy=hierarchy,
            l1i=Cache("l1i", hierarchy.l1i, "lru"),
            l1d=Cache("l1d", hierarchy.l1d, "lru"),
            l2=Cache("l2", hierarchy.l2, policy.l2_replacement),
            l1d_prefetcher=make_prefetcher(policy.l1d_prefetcher, hierarchy.l1d.line_size, "l1d"),
            l1i_prefetcher=make_prefetcher(policy.l1i_prefetcher, hierarchy.l1i.line_size, "l1i"),
        )

    def sections(self):
        core = [self.instructions, _U64.unpack(_F64.pack(self.cycles))[0],
                0 if self.last_fetch_line is None else self.last_fetch_line + 1]
        return [self.l1i.export_state(), self.l1d.export_state(), self.l2.export_state(),
                self.l1d_prefetcher.export_state(), self.l1i_prefetcher.export_state(), core]

    def load_sections(self, sections):
        l1i, l1d, l2, dpf, ipf, core = sections
        self.l1i.import_state(l1i)
        self.l1d.import_state(l1d)
        self.l2.import_state(l2)
        self.l1d_prefetcher.import_state(dpf)
        self.l1i_prefetcher.import_state(ipf)
        self.instructions = core[0]
        self.cycles = _F64.unpack(_U64.pack(core[1]))[0]
        self.last_fetch_line = None if core[2] == 0 else core[2] - 1


def _check_state(state, policy):
    if state.policy != policy:
        raise ConfigurationError(
            f"machine state was built for policy {state.policy.id}, not {policy.id}")
    h = state.hierarchy
    if (state.l1i.geometry, state.l1d.geometry, state.l2.geometry) != (h.l1i, h.l1d, h.l2):
        raise ConfigurationError("machine state caches do not match its hierarchy configuration")
    if state.l2.policy.name != policy.l2_replacement.name:
        raise ConfigurationError(
            f"L2 runs {state.l2.policy.name} but policy {policy.id} asks for {policy.l2_replacement.name}")


def _run_records(state, pcs, kinds, addrs):
    """Drive the hierarchy over the given columns; returns (l2 hits, memory accesses, prefetch candidates)."""
    l1i, l1d, l2 = state.l1i, state.l1d, state.l2
    i_shift, d_shift, l2_shift = l1i.offset_bits, l1d.offset_bits, l2.offset_bits
    i_stats = l1i.stats
    ipf, dpf = state.l1i_prefetcher, state.l1d_prefetcher
    ipf_on = ipf.degree > 0
    dpf_on = dpf.degree > 0
    i_degree, d_degree = ipf.degree, dpf.degree
    l1i_access, l1d_access, l2_access = l1i.access_line, l1d.access_line, l2.access_line

    last_line = state.last_fetch_line
    # a prefetch fill into L1I may displace the current line when ways == 1
    recheck = False
    l2_hits = mem = 0
    candidates = 0

    for pc, kind, addr in zip(pcs, kinds, addrs):
        line = pc >> i_shift
        if line != last_line or recheck:
            hit = l1i_access(line)[0]
            if not hit:
                if l2_access(pc >> l2_shift)[0]:
                    l2_hits += 1
                else:
                    mem += 1
            recheck = False
            if ipf_on and line != last_line:
                wanted = ipf.observe(pc, pc, hit)
                if wanted:
                    candidates += len(wanted)
                    recheck = issue_prefetches(wanted, l1i, l2, i_degree) > 0
            last_line = line
        else:
            # same line as the previous fetch: already MRU in the LRU L1I
            i_stats.accesses += 1
            i_stats.hits += 1

        if kind <= STORE:
            hit = l1d_access(addr >> d_shift)[0]
            if not hit:
                if l2_access(addr >> l2_shift)[0]:
                    l2_hits += 1
                else:
                    mem += 1
            if dpf_on:
                wanted = dpf.observe(pc, addr, hit)
                if wanted:
                    candidates += len(wanted)
                    issue_prefetches(wanted, l1d, l2, d_degree)

    # a pending recheck makes the next segment look up L1I again
    state.last_fetch_line = None if recheck else last_line
    return l2_hits, mem, candidates


def simulate_segment(segment, policy, timing, state, warmup=0):
    """
    Simulate one segment under `policy`, mutating `state` for continuation.

    Every record charges base_cpi; an L1 miss that hits L2 charges the effective
    L2 penalty and one that goes to memory charges the effective memory penalty.
    The first `warmup` records train the state but are excluded from the result.
    """
    _check_state(state, policy)
    timing.validate()
    records = segment.records
    measured = len(records) - warmup
    if warmup < 0 or measured < 1:
        raise ValidationError(
            f"warmup {warmup} leaves no measured instructions in a {len(records)}-record segment", "warmup")

    pcs = records.pcs.tolist()
    kinds = records.kinds.tolist()
    addrs = records.addrs.tolist()
    if warmup:
        _run_records(state, pcs[:warmup], kinds[:warmup], addrs[:warmup])

    before = (state.l1i.stats.copy(), state.l1d.stats.copy(), state.l2.stats.copy())
    l2_hits, mem, candidates = _run_records(state, pcs[warmup:], kinds[warmup:], addrs[warmup:])
    cycles = (measured * timing.base_cpi
              + l2_hits * timing.effective_l2_penalty
              + mem * timing.effective_mem_penalty)
    state.instructions += len(records)
    state.cycles += cycles

    result = SegmentResult(
        benchmark_id=segment.benchmark_id,
        timestep_index=segment.timestep_index,
        policy_id=policy.id,
        instructions=measured,
        cycles=cycles,
        ipc=measured / cycles,
        l1i=state.l1i.stats - before[0],
        l1d=state.l1d.stats - before[1],
        l2=state.l2.stats - before[2],
        prefetch_candidates=candidates,
    )
    logger.debug("%s[%d] %s ipc=%.6f", segment.benchmark_id, segment.timestep_index, policy.id, result.ipc)
    return result


def enumerate_policy_space(l1d_options, l1i_options, l2_options):
    """Cartesian product of the three option lists, ordered by policy id."""
    for label, options in (("l1d", l1d_options), ("l1i", l1i_options), ("l2", l2_options)):
        if not options:
            raise ValidationError(f"policies.{label}: at least one option is required", f"policies.{label}")
        names = [option.name for option in options]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValidationError(
                f"policies.{label}: duplicate ids {', '.join(duplicates)}", f"policies.{label}")
    space = [PolicyConfig(d, i, r).validate()
             for d, i, r in itertools.product(l1d_options, l1i_options, l2_options)]
    return sorted(space, key=lambda config: config.id)


def checkpoint(state: MachineState) -> bytes:
    config = json.dumps({"hierarchy": state.hierarchy.to_dict(), "policy": state.policy.to_dict()},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, _U16.pack(CHECKPOINT_VERSION), _U32.pack(len(config)), config]
    sections = state.sections()
    parts.append(_U32.pack(len(sections)))
    for words in sections:
        parts.append(_U32.pack(len(words)))
        parts.append(struct.pack(f"<{len(words)}Q", *words))
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


class _BlobReader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, size, what):
        if self.pos + size > len(self.blob):
            raise CheckpointFormatError(f"truncated checkpoint while reading {what}", offset=self.pos)
        chunk = self.blob[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]


def restore(blob: bytes) -> MachineState:
    """Rebuild a MachineState from a checkpoint blob; any damage raises before state is built."""
    reader = _BlobReader(bytes(blob))
    if reader.take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad checkpoint magic", offset=0)
    version = _U16.unpack(reader.take(2, "version"))[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}", offset=4)
    if len(blob) < reader.pos + 4:
        raise CheckpointFormatError("truncated checkpoint", offset=len(blob))
    body_end = len(blob) - 4
    expected_crc = _U32.unpack(blob[body_end:])[0]
    if zlib.crc32(blob[:body_end]) != expected_crc:
        raise CheckpointFormatError("checkpoint checksum mismatch (corrupt or truncated)", offset=body_end)
    reader.blob = reader.blob[:body_end]

    config_offset = reader.pos
    raw_config = reader.take(reader.u32("config length"), "config")
    try:
        config = json.loads(raw_config.decode("utf-8"))
        policy = PolicyConfig.from_dict(config["policy"])
        hierarchy = Hierarchy.from_dict(config["hierarchy"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint configuration: {exc}", offset=config_offset) from exc

    sections = []
    for i in range(reader.u32("section count")):
        count = reader.u32(f"section {i} length")
        sections.append(list(struct.unpack(f"<{count}Q", reader.take(8 * count, f"section {i}"))))
    if reader.pos != len(reader.blob):
        raise CheckpointFormatError("trailing bytes after the last section", offset=reader.pos)
    if len(sections) != 6:
        raise CheckpointFormatError(f"expected 6 sections, found {len(sections)}", offset=reader.pos)

    state = MachineState.fresh(policy, hierarchy)
    try:
        state.load_sections(sections)
    except (IndexError, ValueError, TypeError) as exc:
        raise CheckpointFormatError(f"inconsistent checkpoint sections: {exc}") from exc
    return state
