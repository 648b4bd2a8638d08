"""Synthetic trace generation, segmentation into timesteps, and the binary trace file format.

Trace file layout (little-endian):

    offset 0   5 bytes   magic b"PHTR1"
    offset 5   u64       record count N
    offset 13  N x 17    records: u64 pc, u8 kind (0=load 1=store 2=branch 3=other), u64 addr
"""
import logging
import struct

import numpy as np

from models import (
    BRANCH, LOAD, MASK64, OTHER, RECORD_DTYPE, STORE, Segment, SyntheticSpec, Trace, TraceFormatError,
    ValidationError,
)

logger = logging.getLogger(__name__)

TRACE_MAGIC = b"PHTR1"
HEADER = struct.Struct("<5sQ")

CODE_BASE = 0x400000
CODE_PHASE_SPAN = 0x1000
LOOP_BODY_MIN = 8
LOOP_BODY_MAX = 32
CHASE_SLOT_BYTES = 64


def phase_generator(seed, phase_index):
    """The seeded PCG64 stream a phase draws from; fixed so traces match across platforms."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, phase_index])))


def _phase_addresses(phase, rng, count):
    m = np.arange(count, dtype=np.uint64)
    base = np.uint64(phase.region_base)
    if phase.pattern == "stride":
        # negative steps wrap modulo 2**64
        return base + m * np.uint64(phase.step & MASK64)
    if phase.pattern == "random_ws":
        offsets = rng.integers(0, phase.working_set_bytes, size=count, dtype=np.uint64)
        return base + offsets
    # chase: walk one seeded cyclic permutation of line-sized slots
    order = rng.permutation(phase.permutation_size).astype(np.uint64)
    return base + order[m % np.uint64(phase.permutation_size)] * np.uint64(CHASE_SLOT_BYTES)


def _generate_phase(phase, phase_index, seed):
    rng = phase_generator(seed, phase_index)
    body = int(rng.integers(LOOP_BODY_MIN, LOOP_BODY_MAX + 1))
    slot = np.arange(phase.length, dtype=np.uint64) % np.uint64(body)
    pcs = np.uint64(CODE_BASE + CODE_PHASE_SPAN * phase_index) + slot * np.uint64(4)

    draw = rng.random(phase.length)
    kinds = np.where(slot == body - 1, BRANCH, OTHER).astype(np.uint8)
    memory = draw < phase.load_fraction
    stores = memory & (draw >= phase.load_fraction - phase.store_fraction)
    kinds[memory] = LOAD
    kinds[stores] = STORE

    addrs = np.zeros(phase.length, dtype=np.uint64)
    addrs[memory] = _phase_addresses(phase, rng, int(memory.sum()))
    return pcs, kinds, addrs


def generate_trace(spec: SyntheticSpec) -> Trace:
    """Build the trace described by `spec`; identical specs give bit-identical traces."""
    spec.validate()
    columns = [_generate_phase(phase, i, spec.seed) for i, phase in enumerate(spec.phases)]
    pcs, kinds, addrs = (np.concatenate(parts) for parts in zip(*columns))
    trace = Trace.from_columns(pcs, kinds, addrs)
    logger.debug("generated %d records over %d phases (seed=%d)", len(trace), len(spec.phases), spec.seed)
    return trace


def segment_trace(trace: Trace, chunk_len: int, benchmark_id: str = "") -> list:
    """Split a trace into full chunk_len timesteps; a trailing partial chunk is dropped."""
    if not isinstance(chunk_len, (int, np.integer)) or chunk_len < 1:
        raise ValidationError(f"chunk_len: must be >= 1, got {chunk_len!r}", "chunk_len")
    count = len(trace) // chunk_len
    segments = [
        Segment(benchmark_id, i, trace[i * chunk_len:(i + 1) * chunk_len])
        for i in range(count)
    ]
    dropped = len(trace) - count * chunk_len
    if dropped:
        logger.debug("%s: discarded %d trailing records", benchmark_id or "trace", dropped)
    return segments


def encode_trace(trace: Trace) -> bytes:
    return HEADER.pack(TRACE_MAGIC, len(trace)) + trace.records.tobytes()


def write_trace(trace: Trace, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_trace(trace))
    logger.debug("wrote %d records to %s", len(trace), path)


def read_trace(path) -> Trace:
    with open(path, "rb") as f:
        data = f.read()
    return decode_trace(data)


def decode_trace(data: bytes) -> Trace:
    if len(data) < len(TRACE_MAGIC):
        raise TraceFormatError("truncated trace header", offset=len(data))
    if data[:len(TRACE_MAGIC)] != TRACE_MAGIC:
        raise TraceFormatError(f"bad magic {data[:len(TRACE_MAGIC)]!r}, expected {TRACE_MAGIC!r}", offset=0)
    if len(data) < HEADER.size:
        raise TraceFormatError("truncated record count", offset=len(data))
    _, count = HEADER.unpack_from(data)
    expected = HEADER.size + count * RECORD_DTYPE.itemsize
    if len(data) < expected:
        # point at the first record that is not complete
        complete = (len(data) - HEADER.size) // RECORD_DTYPE.itemsize
        raise TraceFormatError(
            f"truncated trace: header declares {count} records, file holds {complete}",
            offset=HEADER.size + complete * RECORD_DTYPE.itemsize)
    if len(data) > expected:
        raise TraceFormatError(f"{len(data) - expected} unexpected bytes after the last record", offset=expected)
    records = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    trace = Trace(records)
    if count and int(trace.kinds.max()) > OTHER:
        bad = int(np.argmax(trace.kinds > OTHER))
        raise TraceFormatError(
            f"record {bad} has invalid kind {int(trace.kinds[bad])}",
            offset=HEADER.size + bad * RECORD_DTYPE.itemsize + 8)
    return trace
