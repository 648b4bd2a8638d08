"""Report bundle assembly and emission (CSV/JSON tables plus per-figure plot data).

Number formatting: columns whose name ends in `_pct` are written with
`precision` decimals; every other float with 9 significant digits. Missing
values (a mean over an empty set) are written as empty CSV fields or JSON null.
"""
import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

import analytics
from config import DEFAULT_SUBSET_KS, report_timestamp
from harness import IPC_DIGITS, IpcMatrix
from models import ValidationError, __version__

logger = logging.getLogger(__name__)

TABLE_NAMES = ("summary", "buckets", "benchmark_distribution", "global_distribution", "frequency",
               "subsets", "duels", "headroom")
METADATA_FILE = "metadata.json"
JSON_BUNDLE_FILE = "bundle.json"
FORMATS = ("csv", "json")
DEFAULT_PRECISION = 2

PLOT_FILES = {
    "fig1": "fig1_benchmark_loss_boxplot.csv",
    "fig2": "fig2_global_loss_distribution.csv",
    "fig3": "fig3_loss_buckets.csv",
    "fig4": "fig4_optimality_frequency.csv",
    "fig5": "fig5_subset_selection.csv",
}


@dataclass
class ReportBundle:
    """
    Every analysis table for one matrix plus run metadata.

    Attributes:
        tables (dict): Table name -> pandas DataFrame, in TABLE_NAMES order.
        metadata (dict): matrix hash, tool version, timestamp and conventions.
    """

    tables: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def table(self, name):
        try:
            return self.tables[name]
        except KeyError:
            raise ValidationError(f"report bundle has no {name!r} table", "table") from None


def _none_to_nan(value):
    return np.nan if value is None else value


def matrix_digest(matrix: IpcMatrix) -> str:
    """SHA-256 of the matrix in its canonical CSV form."""
    text = matrix.to_frame().to_csv(index=False, float_format=f"%.{IPC_DIGITS}g", lineterminator="\n")
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _summary_table(summaries, best):
    rows = []
    for s in summaries:
        rows.append({
            "policy": s.policy_id,
            "timesteps": s.timesteps,
            "mean_loss_pct": s.mean_loss_pct,
            "match_rate_pct": s.match_rate_pct,
            "within_half_pct": s.within_half_pct,
            "over_1": s.exceedances[1.0],
            "over_2_5": s.exceedances[2.5],
            "over_5": s.exceedances[5.0],
            "over_10": s.exceedances[10.0],
            "benchmarks_over_2_5": s.benchmarks_over_2_5,
            "mean_ipc": s.mean_ipc,
            "best_static": s.policy_id == best,
        })
    return pd.DataFrame(rows)


def _bucket_rows(histogram):
    total = histogram.total
    return [{"policy": histogram.policy_id, "bucket_label": label, "count": count, "fraction": count / total}
            for label, count in zip(histogram.labels, histogram.counts)]


def _box_row(policy, box):
    return {"policy": policy, "benchmark": box.benchmark, "count": box.count, "min": box.min, "q1": box.q1,
            "median": box.median, "q3": box.q3, "max": box.max}


def _headroom_row(h):
    return {
        "baseline": h.baseline, "reference": h.reference, "threshold_pct": h.threshold_pct,
        "timesteps": h.timesteps, "mean_improvement_pct": h.mean_improvement_pct,
        "count_above": h.count_above, "mean_above_pct": _none_to_nan(h.mean_above_pct),
        "benchmarks_covered": h.benchmarks_covered, "benchmarks_total": h.benchmarks_total,
        "ratio_of_means_pct": h.ratio_of_means_pct,
    }


def build_report(matrix: IpcMatrix, baseline=None, ks=DEFAULT_SUBSET_KS, objective="loss") -> ReportBundle:
    """Run every analysis over `matrix` and collect the results as tables."""
    oracle = analytics.compute_oracle(matrix)
    table = analytics.compute_loss_table(matrix, oracle)
    loss_rows = table.rows()
    best = analytics.best_static(matrix)
    summaries = [analytics.summarize_policy(row, oracle.winner_sets) for row in loss_rows]

    bucket_rows = [r for row in loss_rows for r in _bucket_rows(analytics.bucket_histogram(row))]
    box_rows = [_box_row(row.policy_id, box) for row in loss_rows
                for box in analytics.per_benchmark_distribution(row).values()]
    global_rows = [_box_row(row.policy_id, analytics.global_distribution(row)) for row in loss_rows]

    frequency = analytics.optimality_frequency(oracle)
    frequency_rows = [{"policy": p, "frequency_pct": pct, "fraction": pct / 100.0}
                      for p, pct in frequency.frequencies.items()]

    subset_rows = []
    for k in sorted(set(ks)):
        if not 1 <= k <= len(matrix.policies):
            logger.info("skipping subset size %d: matrix has %d policies", k, len(matrix.policies))
            continue
        selection = analytics.best_k_subset(matrix, oracle, k, objective)
        subset_rows.append({
            "k": k, "objective": objective, "policies": selection.subset_id,
            "mean_loss_pct": selection.mean_loss_pct, "match_rate_pct": selection.match_rate_pct,
            "within_half_pct": selection.within_half_pct, "mean_ipc": selection.mean_ipc,
        })
        if k > 1:
            bucket_rows += _bucket_rows(analytics.bucket_histogram(selection.loss_row))

    duel_rows = []
    for a, b in itertools.combinations(matrix.policies, 2):
        d = analytics.pairwise_compare(matrix, a, b)
        duel_rows.append({
            "policy_a": a, "policy_b": b, "timesteps": d.timesteps, "wins": d.wins, "losses": d.losses,
            "ties": d.ties, "win_rate_pct": d.win_rate_pct, "loss_rate_pct": d.loss_rate_pct,
            "tie_rate_pct": d.tie_rate_pct,
            "mean_speedup_on_wins_pct": _none_to_nan(d.mean_speedup_on_wins_pct),
            "mean_slowdown_on_losses_pct": _none_to_nan(d.mean_slowdown_on_losses_pct),
        })

    headroom_rows = []
    if baseline is not None:
        if baseline in matrix.policies:
            for reference in ("oracle", best):
                headroom_rows.append(_headroom_row(analytics.baseline_headroom(matrix, baseline, reference)))
        else:
            logger.warning("baseline %s is not in the matrix; headroom table left empty", baseline)

    tables = {
        "summary": _summary_table(summaries, best),
        "buckets": pd.DataFrame(bucket_rows),
        "benchmark_distribution": pd.DataFrame(box_rows),
        "global_distribution": pd.DataFrame(global_rows).drop(columns="benchmark"),
        "frequency": pd.DataFrame(frequency_rows),
        "subsets": pd.DataFrame(subset_rows),
        "duels": pd.DataFrame(duel_rows, columns=[
            "policy_a", "policy_b", "timesteps", "wins", "losses", "ties", "win_rate_pct", "loss_rate_pct",
            "tie_rate_pct", "mean_speedup_on_wins_pct", "mean_slowdown_on_losses_pct"]),
        "headroom": pd.DataFrame(headroom_rows, columns=[
            "baseline", "reference", "threshold_pct", "timesteps", "mean_improvement_pct", "count_above",
            "mean_above_pct", "benchmarks_covered", "benchmarks_total", "ratio_of_means_pct"]),
    }
    metadata = {
        "tool_version": __version__,
        "matrix_sha256": matrix_digest(matrix),
        "generated_at": report_timestamp(),
        "benchmarks": len(matrix.benchmarks),
        "timesteps": matrix.n_timesteps,
        "policies": len(matrix.policies),
        "best_static": best,
        "baseline": baseline,
        "subset_objective": objective,
        "tie_epsilon": analytics.TIE_EPSILON,
        "ties_present": frequency.ties_present,
        "frequency_credit": "full credit to every tied winner; frequencies may sum above 100",
        "slowdown_convention": "(1 - ipc_a / ipc_b) * 100 on timesteps where a loses",
        "headroom_convention": "mean of per-timestep (ipc_ref - ipc_base) / ipc_base; ratio of means alongside",
        "quartile_method": "linear",
    }
    logger.info("built report: %d policies, %d timesteps, best static %s",
                len(matrix.policies), matrix.n_timesteps, best)
    return ReportBundle(tables, metadata)


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def _format_value(column, value, precision):
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return None
        if column.endswith("_pct"):
            return f"{value:.{precision}f}"
        return f"{value:.{IPC_DIGITS}g}"
    return value


def format_frame(frame: pd.DataFrame, precision=DEFAULT_PRECISION) -> pd.DataFrame:
    """String-render every float column by the report rules; other columns are left alone."""
    out = frame.copy()
    for column in out.columns:
        if out[column].dtype.kind == "f":
            out[column] = [_format_value(column, v, precision) for v in out[column].tolist()]
    return out


def _json_records(frame, precision):
    records = []
    for row in frame.to_dict(orient="records"):
        record = {}
        for column, value in row.items():
            if isinstance(value, (float, np.floating)):
                text = _format_value(column, float(value), precision)
                record[column] = None if text is None else float(text)
            elif isinstance(value, np.integer):
                record[column] = int(value)
            elif isinstance(value, np.bool_):
                record[column] = bool(value)
            else:
                record[column] = value
        records.append(record)
    return records


def _write_csv(frame, path, precision):
    format_frame(frame, precision).to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=False, ensure_ascii=False) + "\n"


def render_bundle(bundle: ReportBundle, fmt="csv", precision=DEFAULT_PRECISION) -> str:
    """The whole bundle as one text document: JSON, or CSV tables each headed by `# <name>`."""
    if fmt == "json":
        return _dump_json({"metadata": bundle.metadata,
                           "tables": {n: _json_records(bundle.table(n), precision) for n in TABLE_NAMES}})
    if fmt != "csv":
        raise ValidationError(f"format must be one of {', '.join(FORMATS)}, got {fmt!r}", "format")
    parts = [f"# metadata\n{_dump_json(bundle.metadata)}"]
    for name in TABLE_NAMES:
        text = format_frame(bundle.table(name), precision).to_csv(index=False, lineterminator="\n")
        parts.append(f"# {name}\n{text}")
    return "\n".join(parts)


def write_bundle(bundle: ReportBundle, out_dir, fmt="csv", precision=DEFAULT_PRECISION) -> list:
    """Write the bundle into `out_dir`: one CSV per table plus metadata.json, or a single bundle.json."""
    if fmt not in FORMATS:
        raise ValidationError(f"format must be one of {', '.join(FORMATS)}, got {fmt!r}", "format")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / JSON_BUNDLE_FILE
        path.write_text(render_bundle(bundle, "json", precision), encoding="utf-8")
        written = [path]
    else:
        written = []
        for name in TABLE_NAMES:
            path = out / f"{name}.csv"
            _write_csv(bundle.table(name), path, precision)
            written.append(path)
        path = out / METADATA_FILE
        path.write_text(_dump_json(bundle.metadata), encoding="utf-8")
        written.append(path)
    logger.info("wrote %d report files to %s", len(written), out)
    return written


def read_bundle(in_dir) -> ReportBundle:
    """Load a bundle written by write_bundle in either format."""
    src = Path(in_dir)
    json_path = src / JSON_BUNDLE_FILE
    if json_path.exists():
        try:
            raw = json.loads(json_path.read_text(encoding="utf-8"))
            tables = {name: pd.DataFrame(raw["tables"][name]) for name in TABLE_NAMES}
            return ReportBundle(tables, raw["metadata"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationError(f"{json_path}: unreadable report bundle ({exc})", "bundle") from exc

    metadata = json.loads((src / METADATA_FILE).read_text(encoding="utf-8"))
    tables = {}
    for name in TABLE_NAMES:
        try:
            tables[name] = pd.read_csv(src / f"{name}.csv", encoding="utf-8")
        except pd.errors.EmptyDataError:
            tables[name] = pd.DataFrame()
    return ReportBundle(tables, metadata)


def emit_plot_data(bundle: ReportBundle, out_dir, precision=DEFAULT_PRECISION) -> list:
    """
    Write the data behind each figure as its own CSV.

    fig1: per-benchmark loss box statistics of the best static policy.
    fig2: whole-run loss distribution per policy.
    fig3: loss buckets per policy (and per best-k subset), bottom-to-top bucket order.
    fig4: optimality frequency per policy, most frequent first.
    fig5: best-k subset selections next to the best static policy.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    best = bundle.metadata["best_static"]

    distribution = bundle.table("benchmark_distribution")
    fig1 = distribution[distribution["policy"] == best].reset_index(drop=True)

    summary = bundle.table("summary")
    fig2 = bundle.table("global_distribution").merge(summary[["policy", "mean_loss_pct"]], on="policy")

    frequency = bundle.table("frequency")
    fig4 = frequency.sort_values(["frequency_pct", "policy"], ascending=[False, True], kind="stable")

    best_row = summary[summary["policy"] == best].iloc[0]
    fig5 = pd.concat([
        pd.DataFrame([{"k": 0, "policies": f"best_static:{best}", "mean_loss_pct": best_row["mean_loss_pct"],
                       "match_rate_pct": best_row["match_rate_pct"]}]),
        bundle.table("subsets")[["k", "policies", "mean_loss_pct", "match_rate_pct"]],
    ], ignore_index=True)

    frames = {"fig1": fig1, "fig2": fig2, "fig3": bundle.table("buckets"), "fig4": fig4, "fig5": fig5}
    written = []
    for key, frame in frames.items():
        path = out / PLOT_FILES[key]
        _write_csv(frame, path, precision)
        written.append(path)
    logger.info("wrote plot data for %d figures to %s", len(written), out)
    return written
