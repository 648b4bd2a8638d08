"""YAML plan/spec loading, defaults, environment variables and logging setup.

Every parse_* helper takes the raw mapping from `yaml.safe_load` plus a
dotted path used in error messages, and returns a validated model object.
"""
import logging
import os
import time
from pathlib import Path

import yaml

from engine import enumerate_policy_space
from harness import BenchmarkSource, ExperimentPlan
from models import (
    CacheGeometry, Hierarchy, PhaseSpec, PrefetcherSpec, ReplacementSpec, SyntheticSpec, TimingModel,
    ValidationError,
)

DEFAULT_TIMING = TimingModel(base_cpi=0.25, l2_hit_penalty=12.0, mem_penalty=200.0, overlap=0.6)
DEFAULT_HIERARCHY = Hierarchy(
    l1i=CacheGeometry(sets=64, ways=8, line_size=64),
    l1d=CacheGeometry(sets=64, ways=8, line_size=64),
    l2=CacheGeometry(sets=1024, ways=8, line_size=64),
)
DEFAULT_CHUNK_LEN = 200_000
DEFAULT_BASELINE = "ip_stride/i_next_line/lru"
DEFAULT_LOG_LEVEL = "WARNING"
DEFAULT_SUBSET_KS = (1, 2, 3)

WORKERS_ENV = "PHASESIM_WORKERS"
LOG_LEVEL_ENV = "PHASESIM_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def setup_logging(level=None):
    level = (level or os.environ.get(LOG_LEVEL_ENV) or DEFAULT_LOG_LEVEL).upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ValidationError(f"unknown log level {level!r}", "log_level")
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def default_workers():
    """Worker count from PHASESIM_WORKERS; unset or 0 means serial."""
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 0
    try:
        workers = int(raw)
    except ValueError:
        raise ValidationError(f"{WORKERS_ENV} must be an integer, got {raw!r}", WORKERS_ENV) from None
    if workers < 0:
        raise ValidationError(f"{WORKERS_ENV} must be >= 0, got {workers}", WORKERS_ENV)
    return workers


def report_timestamp():
    """UTC timestamp for report metadata; SOURCE_DATE_EPOCH pins it for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    seconds = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(seconds))


def load_yaml(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ValidationError(f"{path}: invalid YAML ({exc})", str(path)) from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be a mapping", str(path))
    return raw


# ---------------------------------------------------------------------------
# Field helpers
# ---------------------------------------------------------------------------

def _mapping(raw, path):
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: expected a mapping", path)
    return raw


def _reject_unknown(raw, allowed, path):
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ValidationError(f"{path}.{unknown[0]}: unknown field", f"{path}.{unknown[0]}")


def _int(raw, key, path, default=None):
    value = raw.get(key, default)
    if value is None:
        raise ValidationError(f"{path}.{key}: required", f"{path}.{key}")
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{path}.{key}: must be an integer, got {value!r}", f"{path}.{key}")
    return value


def _float(raw, key, path, default=None):
    value = raw.get(key, default)
    if value is None:
        raise ValidationError(f"{path}.{key}: required", f"{path}.{key}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{path}.{key}: must be a number, got {value!r}", f"{path}.{key}")
    return float(value)


def _str(raw, key, path, default=None):
    value = raw.get(key, default)
    if not isinstance(value, str) or not value:
        raise ValidationError(f"{path}.{key}: must be a non-empty string", f"{path}.{key}")
    return value


def _list(raw, key, path):
    value = raw.get(key)
    if not isinstance(value, list) or not value:
        raise ValidationError(f"{path}.{key}: must be a non-empty list", f"{path}.{key}")
    return value


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------

def parse_timing(raw, path="timing"):
    if raw is None:
        return DEFAULT_TIMING
    raw = _mapping(raw, path)
    _reject_unknown(raw, ("base_cpi", "l2_hit_penalty", "mem_penalty", "overlap"), path)
    d = DEFAULT_TIMING
    return TimingModel(
        base_cpi=_float(raw, "base_cpi", path, d.base_cpi),
        l2_hit_penalty=_float(raw, "l2_hit_penalty", path, d.l2_hit_penalty),
        mem_penalty=_float(raw, "mem_penalty", path, d.mem_penalty),
        overlap=_float(raw, "overlap", path, d.overlap),
    ).validate(path)


def parse_geometry(raw, default, path):
    if raw is None:
        return default
    raw = _mapping(raw, path)
    _reject_unknown(raw, ("sets", "ways", "line_size", "capacity"), path)
    line_size = _int(raw, "line_size", path, default.line_size)
    ways = _int(raw, "ways", path, default.ways)
    if "capacity" in raw:
        if "sets" in raw:
            raise ValidationError(f"{path}: give either sets or capacity, not both", f"{path}.capacity")
        sets = _int(raw, "capacity", path) // max(ways * line_size, 1)
    else:
        sets = _int(raw, "sets", path, default.sets)
    return CacheGeometry(sets, ways, line_size).validate(path)


def parse_hierarchy(raw, path="hierarchy"):
    if raw is None:
        return DEFAULT_HIERARCHY
    raw = _mapping(raw, path)
    _reject_unknown(raw, ("l1i", "l1d", "l2"), path)
    return Hierarchy(
        l1i=parse_geometry(raw.get("l1i"), DEFAULT_HIERARCHY.l1i, f"{path}.l1i"),
        l1d=parse_geometry(raw.get("l1d"), DEFAULT_HIERARCHY.l1d, f"{path}.l1d"),
        l2=parse_geometry(raw.get("l2"), DEFAULT_HIERARCHY.l2, f"{path}.l2"),
    ).validate(path)


def parse_prefetcher(raw, side, path):
    """A prefetcher option is either a bare id or a mapping with `name` plus tuning fields."""
    if isinstance(raw, str):
        return PrefetcherSpec(raw).validate(side, path)
    raw = _mapping(raw, path)
    _reject_unknown(raw, ("name", "table_size", "confidence_threshold", "degree", "detect_window"), path)
    name = _str(raw, "name", path)
    defaults = PrefetcherSpec(name)
    return PrefetcherSpec(
        name=name,
        table_size=_int(raw, "table_size", path, defaults.table_size),
        confidence_threshold=_int(raw, "confidence_threshold", path, defaults.confidence_threshold),
        degree=_int(raw, "degree", path, defaults.degree),
        detect_window=_int(raw, "detect_window", path, defaults.detect_window),
    ).validate(side, path)


def parse_replacement(raw, path):
    if isinstance(raw, str):
        return ReplacementSpec(raw).validate(path)
    raw = _mapping(raw, path)
    _reject_unknown(raw, ("name", "seed"), path)
    return ReplacementSpec(_str(raw, "name", path), _int(raw, "seed", path, 0)).validate(path)


def parse_policy_space(raw, path="policies"):
    raw = _mapping(raw, path)
    _reject_unknown(raw, ("l1d", "l1i", "l2"), path)
    l1d = [parse_prefetcher(item, "l1d", f"{path}.l1d[{i}]") for i, item in enumerate(_list(raw, "l1d", path))]
    l1i = [parse_prefetcher(item, "l1i", f"{path}.l1i[{i}]") for i, item in enumerate(_list(raw, "l1i", path))]
    l2 = [parse_replacement(item, f"{path}.l2[{i}]") for i, item in enumerate(_list(raw, "l2", path))]
    return enumerate_policy_space(l1d, l1i, l2)


def parse_phase(raw, path):
    raw = _mapping(raw, path)
    _reject_unknown(raw, ("pattern", "length", "load_fraction", "store_fraction", "region_base", "step",
                          "working_set_bytes", "permutation_size"), path)
    pattern = _str(raw, "pattern", path)
    return PhaseSpec(
        pattern=pattern,
        length=_int(raw, "length", path),
        load_fraction=_float(raw, "load_fraction", path),
        region_base=_int(raw, "region_base", path, 0),
        step=_int(raw, "step", path, 64),
        working_set_bytes=_int(raw, "working_set_bytes", path) if pattern == "random_ws" else None,
        permutation_size=_int(raw, "permutation_size", path) if pattern == "chase" else None,
        store_fraction=_float(raw, "store_fraction", path, 0.0),
    ).validate(path)


def parse_synthetic(raw, path="synthetic"):
    raw = _mapping(raw, path)
    _reject_unknown(raw, ("seed", "phases"), path)
    phases = tuple(parse_phase(p, f"{path}.phases[{i}]") for i, p in enumerate(_list(raw, "phases", path)))
    return SyntheticSpec(_int(raw, "seed", path), phases).validate(path)


def parse_benchmark(raw, path, base_dir="."):
    raw = _mapping(raw, path)
    _reject_unknown(raw, ("id", "trace", "synthetic"), path)
    benchmark_id = _str(raw, "id", path)
    if ("trace" in raw) == ("synthetic" in raw):
        raise ValidationError(f"{path}: exactly one of trace or synthetic is required", path)
    if "trace" in raw:
        # trace paths are relative to the plan file
        trace_path = str(Path(base_dir) / _str(raw, "trace", path))
        return BenchmarkSource(benchmark_id, trace_path=trace_path)
    return BenchmarkSource(benchmark_id, synthetic=parse_synthetic(raw["synthetic"], f"{path}.synthetic"))


def parse_plan(raw, base_dir="."):
    raw = _mapping(raw, "plan")
    _reject_unknown(raw, ("benchmarks", "policies", "chunk_len", "timing", "hierarchy", "mode", "warmup",
                          "baseline"), "plan")
    benchmarks = tuple(parse_benchmark(b, f"benchmarks[{i}]", base_dir)
                       for i, b in enumerate(_list(raw, "benchmarks", "plan")))
    if "policies" not in raw:
        raise ValidationError("policies: required", "policies")
    plan = ExperimentPlan(
        benchmarks=benchmarks,
        policies=tuple(parse_policy_space(raw["policies"])),
        chunk_len=_int(raw, "chunk_len", "plan", DEFAULT_CHUNK_LEN),
        timing=parse_timing(raw.get("timing")),
        hierarchy=parse_hierarchy(raw.get("hierarchy")),
        mode=_str(raw, "mode", "plan", "continuous"),
        warmup=_int(raw, "warmup", "plan", 0),
    )
    return plan.validate()


def load_plan(path):
    return parse_plan(load_yaml(path), base_dir=Path(path).parent)


def plan_baseline(path):
    return load_yaml(path).get("baseline", DEFAULT_BASELINE)


def load_sources(path):
    """
    Benchmarks described by a YAML file: either a full plan (its `benchmarks`
    list) or a single synthetic spec (`seed` and `phases`), named after the file.
    """
    raw = load_yaml(path)
    if "benchmarks" in raw:
        base_dir = Path(path).parent
        return [parse_benchmark(b, f"benchmarks[{i}]", base_dir)
                for i, b in enumerate(_list(raw, "benchmarks", "plan"))]
    return [BenchmarkSource(Path(path).stem, synthetic=parse_synthetic(raw))]
