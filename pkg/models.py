"""Domain types shared by the simulator, the experiment harness and the analytics."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator, NamedTuple, Optional

import numpy as np

__version__ = "1.0.0"

LOAD, STORE, BRANCH, OTHER = 0, 1, 2, 3
KIND_NAMES = ("load", "store", "branch", "other")
KIND_CODES = {name: code for code, name in enumerate(KIND_NAMES)}

# Packed on-disk layout: u64 pc, u8 kind, u64 addr (17 bytes, little-endian).
RECORD_DTYPE = np.dtype([("pc", "<u8"), ("kind", "u1"), ("addr", "<u8")])

MASK64 = (1 << 64) - 1

DATA_PREFETCHERS = ("none", "next_line", "ip_stride", "stream")
INSTRUCTION_PREFETCHERS = ("none", "i_next_line", "i_next_2_line")
REPLACEMENT_POLICIES = ("lru", "fifo", "random", "srrip", "drrip")
PATTERNS = ("stride", "random_ws", "chase")


class PhasesimError(Exception):
    """Base class for every error raised by the simulator and analytics."""


class ValidationError(PhasesimError, ValueError):
    """A value, spec or config field breaks a documented invariant."""

    def __init__(self, message, field_name=None):
        super().__init__(message)
        self.field_name = field_name


class TraceFormatError(PhasesimError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointFormatError(PhasesimError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigurationError(PhasesimError):
    """Machine state, geometry and policy configuration disagree."""


class MatrixError(ValidationError):
    """An IPC matrix cell is missing, duplicated or not a positive number."""

    def __init__(self, message, cell=None):
        super().__init__(message, field_name="ipc")
        self.cell = cell


def is_power_of_two(value):
    return isinstance(value, int) and value > 0 and (value & (value - 1)) == 0


def to_word(value):
    """Encode a signed Python int as an unsigned 64-bit word."""
    return value & MASK64


def from_word(word):
    return word - (1 << 64) if word >= (1 << 63) else word


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    seq: int
    pc: int
    kind: str
    addr: int


class Trace:
    """
    An immutable instruction trace held as a numpy structured array.

    The array uses RECORD_DTYPE, so it is also the exact byte image of the
    records section of a trace file. The sequence number of a record is its
    row index.

    Attributes:
        records (np.ndarray): Structured array with fields pc, kind, addr.

    Methods:
        from_columns(pcs, kinds, addrs): Build a trace from three columns.
        from_records(records): Build a trace from TraceRecord objects.
        validate(): Check kinds and the addr == 0 rule for non-memory records.
    """

    __slots__ = ("records",)

    def __init__(self, records=None):
        if records is None:
            records = np.zeros(0, dtype=RECORD_DTYPE)
        if records.dtype != RECORD_DTYPE:
            raise ValidationError("trace records must use RECORD_DTYPE", "records")
        records.flags.writeable = False
        self.records = records

    @classmethod
    def from_columns(cls, pcs, kinds, addrs):
        n = len(pcs)
        if len(kinds) != n or len(addrs) != n:
            raise ValidationError("trace columns must have equal length", "records")
        records = np.zeros(n, dtype=RECORD_DTYPE)
        records["pc"] = pcs
        records["kind"] = kinds
        records["addr"] = addrs
        return cls(records)

    @classmethod
    def from_records(cls, records):
        rows = [(r.pc, KIND_CODES[r.kind], r.addr) for r in records]
        return cls(np.array(rows, dtype=RECORD_DTYPE))

    @property
    def pcs(self):
        return self.records["pc"]

    @property
    def kinds(self):
        return self.records["kind"]

    @property
    def addrs(self):
        return self.records["addr"]

    def validate(self):
        kinds = self.kinds
        if len(kinds) and int(kinds.max()) > OTHER:
            bad = int(np.argmax(kinds > OTHER))
            raise ValidationError(f"record {bad} has unknown kind {int(kinds[bad])}", "kind")
        non_memory = kinds > STORE
        if np.any(self.addrs[non_memory] != 0):
            bad = int(np.flatnonzero(non_memory & (self.addrs != 0))[0])
            raise ValidationError(f"record {bad} is not a load/store but has addr != 0", "addr")
        return self

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        for seq, (pc, kind, addr) in enumerate(self.records.tolist()):
            yield TraceRecord(seq, pc, KIND_NAMES[kind], addr)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return Trace(self.records[index])
        pc, kind, addr = self.records[index].tolist()
        seq = index if index >= 0 else len(self) + index
        return TraceRecord(seq, pc, KIND_NAMES[kind], addr)

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return len(self) == len(other) and self.records.tobytes() == other.records.tobytes()

    def __repr__(self):
        return f"Trace(len={len(self)})"


@dataclass(frozen=True)
class PhaseSpec:
    """One phase of a synthetic program: an access pattern run for `length` instructions."""

    pattern: str
    length: int
    load_fraction: float
    region_base: int = 0
    step: int = 64
    working_set_bytes: Optional[int] = None
    permutation_size: Optional[int] = None
    store_fraction: float = 0.0

    def validate(self, path="phase"):
        if self.pattern not in PATTERNS:
            raise ValidationError(f"{path}.pattern: unknown pattern {self.pattern!r}", f"{path}.pattern")
        if not isinstance(self.length, int) or self.length < 1:
            raise ValidationError(f"{path}.length: must be >= 1, got {self.length!r}", f"{path}.length")
        if not 0.0 <= self.load_fraction <= 1.0:
            raise ValidationError(f"{path}.load_fraction: must be in [0, 1]", f"{path}.load_fraction")
        if not 0.0 <= self.store_fraction <= self.load_fraction:
            raise ValidationError(
                f"{path}.store_fraction: must be in [0, load_fraction]", f"{path}.store_fraction")
        if self.region_base < 0:
            raise ValidationError(f"{path}.region_base: must be >= 0", f"{path}.region_base")
        if self.pattern == "random_ws" and not is_power_of_two(self.working_set_bytes):
            raise ValidationError(
                f"{path}.working_set_bytes: must be a power of two, got {self.working_set_bytes!r}",
                f"{path}.working_set_bytes")
        if self.pattern == "chase" and not is_power_of_two(self.permutation_size):
            raise ValidationError(
                f"{path}.permutation_size: must be a power of two, got {self.permutation_size!r}",
                f"{path}.permutation_size")
        return self


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int
    phases: tuple = ()

    def validate(self, path="synthetic"):
        if not isinstance(self.seed, int) or not 0 <= self.seed <= MASK64:
            raise ValidationError(f"{path}.seed: must be a 64-bit unsigned integer", f"{path}.seed")
        if not self.phases:
            raise ValidationError(f"{path}.phases: at least one phase is required", f"{path}.phases")
        for i, phase in enumerate(self.phases):
            phase.validate(f"{path}.phases[{i}]")
        return self

    @property
    def total_length(self):
        return sum(phase.length for phase in self.phases)


@dataclass(frozen=True)
class Segment:
    benchmark_id: str
    timestep_index: int
    records: Trace = field(compare=False)

    def __len__(self):
        return len(self.records)


# ---------------------------------------------------------------------------
# Caches and policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CacheGeometry:
    sets: int
    ways: int
    line_size: int = 64

    @classmethod
    def from_capacity(cls, capacity_bytes, ways, line_size=64):
        return cls(capacity_bytes // (ways * line_size), ways, line_size).validate()

    def validate(self, path="geometry"):
        if not is_power_of_two(self.sets):
            raise ValidationError(f"{path}.sets: must be a power of two, got {self.sets!r}", f"{path}.sets")
        if not isinstance(self.ways, int) or self.ways < 1:
            raise ValidationError(f"{path}.ways: must be >= 1, got {self.ways!r}", f"{path}.ways")
        if not is_power_of_two(self.line_size):
            raise ValidationError(
                f"{path}.line_size: must be a power of two, got {self.line_size!r}", f"{path}.line_size")
        return self

    @property
    def capacity(self):
        return self.sets * self.ways * self.line_size

    @property
    def offset_bits(self):
        return self.line_size.bit_length() - 1

    @property
    def set_bits(self):
        return self.sets.bit_length() - 1

    def to_dict(self):
        return {"sets": self.sets, "ways": self.ways, "line_size": self.line_size}


@dataclass(frozen=True)
class Hierarchy:
    l1i: CacheGeometry
    l1d: CacheGeometry
    l2: CacheGeometry

    def validate(self, path="hierarchy"):
        for name in ("l1i", "l1d", "l2"):
            getattr(self, name).validate(f"{path}.{name}")
        return self

    def to_dict(self):
        return {name: getattr(self, name).to_dict() for name in ("l1i", "l1d", "l2")}

    @classmethod
    def from_dict(cls, raw):
        return cls(**{name: CacheGeometry(**raw[name]) for name in ("l1i", "l1d", "l2")})


@dataclass(slots=True)
class CacheStats:
    accesses: int = 0
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    prefetch_fills: int = 0
    prefetch_hits: int = 0

    def copy(self):
        return CacheStats(*self.as_tuple())

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in fields(self))

    def __sub__(self, other):
        return CacheStats(*(a - b for a, b in zip(self.as_tuple(), other.as_tuple())))


class AccessOutcome(NamedTuple):
    hit: bool
    victim: Optional[int]


@dataclass(frozen=True)
class PrefetcherSpec:
    """A prefetcher id plus its tuning parameters; only `name` appears in policy ids."""

    name: str
    table_size: int = 256
    confidence_threshold: int = 2
    degree: int = 1
    detect_window: int = 16

    def validate(self, side="l1d", path=None):
        path = path or side
        allowed = DATA_PREFETCHERS if side == "l1d" else INSTRUCTION_PREFETCHERS
        if self.name not in allowed:
            raise ValidationError(
                f"{path}: unknown {side} prefetcher {self.name!r} (expected one of {', '.join(allowed)})", path)
        if not is_power_of_two(self.table_size):
            raise ValidationError(f"{path}.table_size: must be a power of two", f"{path}.table_size")
        if not 1 <= self.confidence_threshold <= 3:
            raise ValidationError(f"{path}.confidence_threshold: must be in [1, 3]", f"{path}.confidence_threshold")
        if self.degree < 1:
            raise ValidationError(f"{path}.degree: must be >= 1", f"{path}.degree")
        if self.detect_window < 3:
            raise ValidationError(f"{path}.detect_window: must be >= 3", f"{path}.detect_window")
        return self

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ReplacementSpec:
    name: str
    seed: int = 0

    def validate(self, path="l2"):
        if self.name not in REPLACEMENT_POLICIES:
            raise ValidationError(
                f"{path}: unknown replacement policy {self.name!r} "
                f"(expected one of {', '.join(REPLACEMENT_POLICIES)})", path)
        if not 0 <= self.seed <= MASK64:
            raise ValidationError(f"{path}.seed: must be a 64-bit unsigned integer", f"{path}.seed")
        return self

    def to_dict(self):
        return {"name": self.name, "seed": self.seed}


@dataclass(frozen=True)
class PolicyConfig:
    """One point in the policy space: (L1D prefetcher, L1I prefetcher, L2 replacement)."""

    l1d_prefetcher: PrefetcherSpec
    l1i_prefetcher: PrefetcherSpec
    l2_replacement: ReplacementSpec

    @property
    def id(self):
        return f"{self.l1d_prefetcher.name}/{self.l1i_prefetcher.name}/{self.l2_replacement.name}"

    @classmethod
    def parse(cls, text):
        parts = text.strip().lower().split("/")
        if len(parts) != 3 or not all(parts):
            raise ValidationError(f"policy id {text!r} is not of the form l1d/l1i/l2", "policy")
        config = cls(PrefetcherSpec(parts[0]), PrefetcherSpec(parts[1]), ReplacementSpec(parts[2]))
        return config.validate()

    def validate(self):
        self.l1d_prefetcher.validate("l1d")
        self.l1i_prefetcher.validate("l1i")
        self.l2_replacement.validate("l2")
        return self

    def to_dict(self):
        return {
            "l1d": self.l1d_prefetcher.to_dict(),
            "l1i": self.l1i_prefetcher.to_dict(),
            "l2": self.l2_replacement.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw):
        return cls(PrefetcherSpec(**raw["l1d"]), PrefetcherSpec(**raw["l1i"]), ReplacementSpec(**raw["l2"]))

    def __str__(self):
        return self.id


@dataclass(frozen=True)
class TimingModel:
    base_cpi: float = 0.25
    l2_hit_penalty: float = 12.0
    mem_penalty: float = 200.0
    overlap: float = 0.6

    def validate(self, path="timing"):
        if not self.base_cpi > 0:
            raise ValidationError(f"{path}.base_cpi: must be > 0", f"{path}.base_cpi")
        if self.l2_hit_penalty < 0 or self.mem_penalty < 0:
            raise ValidationError(f"{path}: penalties must be >= 0", f"{path}.mem_penalty")
        if not 0.0 <= self.overlap < 1.0:
            raise ValidationError(f"{path}.overlap: must be in [0, 1)", f"{path}.overlap")
        return self

    @property
    def effective_l2_penalty(self):
        return self.l2_hit_penalty * (1.0 - self.overlap)

    @property
    def effective_mem_penalty(self):
        return self.mem_penalty * (1.0 - self.overlap)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class SegmentResult:
    """IPC and per-cache counter deltas for one simulated (segment, policy) cell."""

    benchmark_id: str
    timestep_index: int
    policy_id: str
    instructions: int
    cycles: float
    ipc: float
    l1i: CacheStats
    l1d: CacheStats
    l2: CacheStats
    prefetch_candidates: int = 0
