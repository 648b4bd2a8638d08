"""Experiment grid execution, history-truncation bias measurement, and the IPC matrix CSV.

Matrix CSV: header `benchmark,timestep,policy,ipc`, one row per cell sorted by
(benchmark, timestep, policy), IPC written with 9 significant digits, UTF-8,
LF line endings. `save_matrix` also writes `<csv>.timesteps.json` with each
benchmark's timestep count and the policy list; `load_matrix` checks it when
present, so trailing timesteps cannot go missing unnoticed.
"""
import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from engine import MachineState, simulate_segment
from models import (
    ConfigurationError, Hierarchy, MatrixError, SyntheticSpec, TimingModel, TraceFormatError,
    ValidationError,
)
from traces import generate_trace, read_trace, segment_trace

logger = logging.getLogger(__name__)

MODES = ("continuous", "cold_chunk")
MATRIX_COLUMNS = ["benchmark", "timestep", "policy", "ipc"]
IPC_DIGITS = 9
MANIFEST_SUFFIX = ".timesteps.json"


def quantize_ipc(values):
    """Round to IPC_DIGITS significant digits, the precision the matrix CSV stores."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    return np.array([float(f"{v:.{IPC_DIGITS}g}") for v in flat.tolist()],
                    dtype=np.float64).reshape(np.shape(values))


@dataclass(frozen=True)
class BenchmarkSource:
    """Where a benchmark's trace comes from: a trace file or a synthetic spec."""

    benchmark_id: str
    trace_path: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None

    def validate(self, path="benchmark"):
        if not self.benchmark_id:
            raise ValidationError(f"{path}.id: must be a non-empty string", f"{path}.id")
        if (self.trace_path is None) == (self.synthetic is None):
            raise ValidationError(f"{path}: exactly one of trace or synthetic is required", path)
        if self.synthetic is not None:
            self.synthetic.validate(f"{path}.synthetic")
        return self

    def load(self):
        if self.synthetic is not None:
            return generate_trace(self.synthetic)
        return read_trace(self.trace_path)


@dataclass(frozen=True)
class ExperimentPlan:
    benchmarks: tuple
    policies: tuple
    chunk_len: int
    timing: TimingModel
    hierarchy: Hierarchy
    mode: str = "continuous"
    warmup: int = 0

    def validate(self):
        if not self.benchmarks:
            raise ValidationError("benchmarks: at least one benchmark is required", "benchmarks")
        ids = [b.benchmark_id for b in self.benchmarks]
        for i, source in enumerate(self.benchmarks):
            source.validate(f"benchmarks[{i}]")
            if ids.count(source.benchmark_id) > 1:
                raise ValidationError(f"benchmarks[{i}].id: duplicate id {source.benchmark_id!r}",
                                      f"benchmarks[{i}].id")
        if not self.policies:
            raise ValidationError("policies: the policy space is empty", "policies")
        policy_ids = [p.id for p in self.policies]
        if len(set(policy_ids)) != len(policy_ids):
            raise ValidationError("policies: policy ids must be unique", "policies")
        if not isinstance(self.chunk_len, int) or self.chunk_len < 1:
            raise ValidationError(f"chunk_len: must be >= 1, got {self.chunk_len!r}", "chunk_len")
        if self.mode not in MODES:
            raise ValidationError(f"mode: must be one of {', '.join(MODES)}, got {self.mode!r}", "mode")
        if not 0 <= self.warmup < self.chunk_len:
            raise ValidationError("warmup: must be in [0, chunk_len)", "warmup")
        self.timing.validate()
        self.hierarchy.validate()
        return self


class IpcMatrix:
    """
    The complete (benchmark, timestep, policy) -> IPC dataset.

    Timesteps are flattened into `keys`, an ordered tuple of
    (benchmark, timestep) pairs; `ipc` has one row per key and one column per
    policy. Rows are sorted by key, columns by policy id, and values are
    rounded to the precision the CSV keeps, so save/load is the identity.
    Benchmarks may contribute different numbers of timesteps.
    """

    def __init__(self, keys, policies, ipc, quantize=True):
        ipc = np.asarray(ipc, dtype=np.float64)
        keys = [(str(b), int(t)) for b, t in keys]
        policies = [str(p) for p in policies]
        if ipc.shape != (len(keys), len(policies)):
            raise MatrixError(f"ipc array shape {ipc.shape} does not match {len(keys)} x {len(policies)}")
        if len(set(policies)) != len(policies):
            raise MatrixError("duplicate policy columns")
        if len(set(keys)) != len(keys):
            raise MatrixError("duplicate (benchmark, timestep) rows")
        if not keys or not policies:
            raise MatrixError("matrix has no cells")

        row_order = sorted(range(len(keys)), key=keys.__getitem__)
        col_order = sorted(range(len(policies)), key=policies.__getitem__)
        ipc = ipc[np.ix_(row_order, col_order)]
        self.keys = tuple(keys[i] for i in row_order)
        self.policies = tuple(policies[j] for j in col_order)
        self._check_contiguous()

        bad = ~(np.isfinite(ipc) & (ipc > 0))
        if bad.any():
            i, j = (int(x) for x in np.argwhere(bad)[0])
            cell = (*self.keys[i], self.policies[j])
            raise MatrixError(f"cell {cell}: ipc must be a positive number, got {ipc[i, j]!r}", cell)

        self.ipc = quantize_ipc(ipc) if quantize else ipc.copy()
        self.ipc.flags.writeable = False
        self.benchmarks = tuple(dict.fromkeys(b for b, _ in self.keys))
        lookup = {b: i for i, b in enumerate(self.benchmarks)}
        self.benchmark_index = np.array([lookup[b] for b, _ in self.keys], dtype=np.int64)
        self._columns = {p: j for j, p in enumerate(self.policies)}

    def _check_contiguous(self):
        expected = {}
        for benchmark, timestep in self.keys:
            if timestep != expected.get(benchmark, 0):
                missing = (benchmark, expected.get(benchmark, 0), self.policies[0])
                raise MatrixError(f"missing cell {missing}", missing)
            expected[benchmark] = timestep + 1

    @property
    def n_timesteps(self):
        return len(self.keys)

    @property
    def shape(self):
        return self.ipc.shape

    def policy_index(self, policy):
        try:
            return self._columns[policy]
        except KeyError:
            raise ValidationError(f"policy {policy!r} is not in the matrix", "policy") from None

    def column(self, policy):
        return self.ipc[:, self.policy_index(policy)]

    def cell(self, benchmark, timestep, policy):
        return float(self.ipc[self.keys.index((benchmark, timestep)), self.policy_index(policy)])

    def to_frame(self):
        n, p = self.ipc.shape
        return pd.DataFrame({
            "benchmark": np.repeat([b for b, _ in self.keys], p),
            "timestep": np.repeat([t for _, t in self.keys], p).astype(np.int64),
            "policy": np.tile(self.policies, n),
            "ipc": self.ipc.ravel(),
        })

    def __eq__(self, other):
        if not isinstance(other, IpcMatrix):
            return NotImplemented
        return (self.keys == other.keys and self.policies == other.policies
                and np.array_equal(self.ipc, other.ipc))

    def __repr__(self):
        return (f"IpcMatrix({len(self.benchmarks)} benchmarks, {self.n_timesteps} timesteps, "
                f"{len(self.policies)} policies)")


@dataclass(frozen=True)
class _RowJob:
    source: BenchmarkSource
    policy: object
    chunk_len: int
    timing: TimingModel
    hierarchy: Hierarchy
    mode: str
    warmup: int


@lru_cache(maxsize=4)
def _load_benchmark(source):
    benchmark = source.benchmark_id
    try:
        trace = source.load()
    except TraceFormatError as exc:
        error = TraceFormatError(f"benchmark {benchmark!r}: {exc}")
        error.offset = exc.offset
        raise error from exc
    except OSError as exc:
        raise type(exc)(exc.errno, f"benchmark {benchmark!r}: cannot read trace ({exc.strerror})",
                        exc.filename) from exc
    return trace


def _run_row(job):
    """Simulate one (benchmark, policy) row of timesteps in order."""
    trace = _load_benchmark(job.source)
    benchmark = job.source.benchmark_id
    segments = segment_trace(trace, job.chunk_len, benchmark)
    if not segments:
        raise ValidationError(
            f"benchmark {benchmark!r}: trace has {len(trace)} records, fewer than one chunk of {job.chunk_len}",
            "chunk_len")
    ipcs = []
    state = None
    for segment in segments:
        if state is None or job.mode == "cold_chunk":
            state = MachineState.fresh(job.policy, job.hierarchy)
        try:
            result = simulate_segment(segment, job.policy, job.timing, state, job.warmup)
        except ConfigurationError as exc:
            raise ConfigurationError(
                f"cell ({benchmark}, {segment.timestep_index}, {job.policy.id}): {exc}") from exc
        ipcs.append(result.ipc)
    logger.info("finished %s x %s (%d timesteps)", benchmark, job.policy.id, len(ipcs))
    return ipcs


def run_experiment(plan: ExperimentPlan, workers=None) -> IpcMatrix:
    """
    Simulate every (benchmark, timestep, policy) cell of the plan.

    Each (benchmark, policy) row starts from a fresh MachineState; continuous
    mode carries it across the row's timesteps, cold_chunk mode resets it at
    every chunk. Rows run on a process pool when workers > 1; the result does
    not depend on the worker count.
    """
    plan.validate()
    benchmarks = sorted(plan.benchmarks, key=lambda b: b.benchmark_id)
    policies = sorted(plan.policies, key=lambda p: p.id)
    jobs = [_RowJob(source, policy, plan.chunk_len, plan.timing, plan.hierarchy, plan.mode, plan.warmup)
            for source in benchmarks for policy in policies]
    logger.info("running %d rows (%d benchmarks x %d policies, mode=%s, workers=%s)",
                len(jobs), len(benchmarks), len(policies), plan.mode, workers or 1)

    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_row, jobs))
    else:
        rows = [_run_row(job) for job in jobs]

    keys = []
    blocks = []
    for b, source in enumerate(benchmarks):
        bench_rows = rows[b * len(policies):(b + 1) * len(policies)]
        keys += [(source.benchmark_id, t) for t in range(len(bench_rows[0]))]
        blocks.append(np.column_stack(bench_rows))
    return IpcMatrix(keys, [p.id for p in policies], np.vstack(blocks))


@dataclass(frozen=True)
class BiasPoint:
    chunk_len: int
    gap_pct: float
    chunks: int


def measure_truncation_bias(trace, policy, timing, chunk_lengths, hierarchy, warmup=0):
    """
    Mean absolute relative IPC gap (%) between cold-chunk and continuous runs, per chunk length.

    All lengths are measured over the same prefix of floor(len / M) * M records,
    M the least common multiple of the lengths, so every length divides it;
    gap(L) = mean over chunks of |ipc_cold - ipc_cont| / ipc_cont * 100.
    """
    lengths = list(chunk_lengths)
    if not lengths or any(not isinstance(L, int) or L < 1 for L in lengths):
        raise ValidationError("chunk lengths must be positive integers", "lengths")
    common = math.lcm(*lengths)
    if len(trace) < common:
        raise ValidationError(
            f"trace has {len(trace)} records, shorter than {common}, the least common multiple of the lengths",
            "lengths")
    prefix = trace[:len(trace) // common * common]

    points = []
    for length in lengths:
        segments = segment_trace(prefix, length)
        continuous_state = MachineState.fresh(policy, hierarchy)
        continuous = np.array([simulate_segment(s, policy, timing, continuous_state, warmup).ipc
                               for s in segments])
        cold = np.array([simulate_segment(s, policy, timing, MachineState.fresh(policy, hierarchy), warmup).ipc
                         for s in segments])
        gap = float(np.mean(np.abs(cold - continuous) / continuous * 100.0))
        logger.info("chunk length %d: %d chunks, mean |gap| %.4f%%", length, len(segments), gap)
        points.append(BiasPoint(length, gap, len(segments)))
    return points


def manifest_path(path) -> Path:
    """Sidecar holding the per-benchmark timestep counts of a matrix CSV."""
    path = Path(path)
    return path.with_name(path.name + MANIFEST_SUFFIX)


def save_matrix(matrix: IpcMatrix, path) -> None:
    matrix.to_frame().to_csv(path, index=False, float_format=f"%.{IPC_DIGITS}g",
                             lineterminator="\n", encoding="utf-8")
    counts = Counter(benchmark for benchmark, _ in matrix.keys)
    manifest = {"timesteps": {b: counts[b] for b in sorted(counts)}, "policies": list(matrix.policies)}
    manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    logger.info("wrote %d cells to %s", matrix.ipc.size, path)


def _read_manifest(path):
    sidecar = manifest_path(path)
    if not sidecar.exists():
        logger.debug("no manifest for %s, trailing timesteps are not checked", path)
        return None
    try:
        manifest = json.loads(sidecar.read_text(encoding="utf-8"))
        timesteps = {str(b): int(n) for b, n in manifest["timesteps"].items()}
        policies = [str(p) for p in manifest["policies"]]
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise MatrixError(f"{sidecar}: malformed manifest ({exc})") from exc
    if not policies or any(n < 1 for n in timesteps.values()):
        raise MatrixError(f"{sidecar}: manifest needs policies and positive timestep counts")
    return timesteps, sorted(policies)


def _check_manifest(path, frame, policies):
    manifest = _read_manifest(path)
    if manifest is None:
        return
    expected_steps, expected_policies = manifest
    found = frame.groupby("benchmark")["timestep"].max().to_dict()
    first = sorted(found)[0]
    absent = sorted(set(expected_policies) - set(policies))
    if absent:
        cell = (first, 0, absent[0])
        raise MatrixError(f"missing cell {cell}: policy absent from matrix", cell)
    unknown = sorted(set(policies) - set(expected_policies))
    if unknown:
        cell = (first, 0, unknown[0])
        raise MatrixError(f"cell {cell}: policy not in manifest", cell)
    extra = sorted(set(found) - set(expected_steps))
    if extra:
        cell = (extra[0], 0, policies[0])
        raise MatrixError(f"cell {cell}: benchmark not in manifest", cell)
    for benchmark, count in sorted(expected_steps.items()):
        have = int(found[benchmark]) + 1 if benchmark in found else 0
        if have < count:
            cell = (benchmark, have, policies[0])
            raise MatrixError(f"missing cell {cell}: manifest lists {count} timesteps, found {have}", cell)
        if have > count:
            cell = (benchmark, count, policies[0])
            raise MatrixError(f"cell {cell}: manifest lists only {count} timesteps", cell)


def load_matrix(path) -> IpcMatrix:
    """Read and validate a matrix CSV; every problem names the offending cell."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise MatrixError(f"{path}: empty matrix file") from exc
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise MatrixError(f"{path}: malformed CSV ({exc})") from exc
    if list(frame.columns) != MATRIX_COLUMNS:
        raise MatrixError(f"{path}: header must be {','.join(MATRIX_COLUMNS)}, got {','.join(frame.columns)}")
    if frame.empty:
        raise MatrixError(f"{path}: matrix has no cells")

    timesteps = pd.to_numeric(frame["timestep"], errors="coerce")
    ipc = pd.to_numeric(frame["ipc"], errors="coerce")
    for i in range(len(frame)):
        t = timesteps.iat[i]
        if pd.isna(t) or t != int(t) or t < 0:
            raise MatrixError(f"row {i + 2}: timestep {frame['timestep'].iat[i]!r} is not a non-negative integer")
    frame = frame.assign(timestep=timesteps.astype(np.int64), ipc=ipc)

    key = ["benchmark", "timestep", "policy"]
    duplicated = frame.duplicated(subset=key)
    if duplicated.any():
        row = frame[duplicated].iloc[0]
        cell = (row["benchmark"], int(row["timestep"]), row["policy"])
        raise MatrixError(f"duplicate cell {cell}", cell)

    bad = ~(np.isfinite(frame["ipc"]) & (frame["ipc"] > 0))
    if bad.any():
        row = frame[bad].iloc[0]
        cell = (row["benchmark"], int(row["timestep"]), row["policy"])
        raise MatrixError(f"cell {cell}: ipc must be a positive number", cell)

    policies = sorted(frame["policy"].unique())
    present = set(zip(frame["benchmark"], frame["timestep"], frame["policy"]))
    for benchmark in sorted(frame["benchmark"].unique()):
        last = int(frame.loc[frame["benchmark"] == benchmark, "timestep"].max())
        for t in range(last + 1):
            for policy in policies:
                if (benchmark, t, policy) not in present:
                    cell = (benchmark, t, policy)
                    raise MatrixError(f"missing cell {cell}", cell)
    _check_manifest(path, frame, policies)

    table = frame.pivot(index=["benchmark", "timestep"], columns="policy", values="ipc").sort_index()
    table = table[policies]
    return IpcMatrix(list(table.index), policies, table.to_numpy(dtype=np.float64))
