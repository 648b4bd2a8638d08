"""Command-line front end: trace generation, grid runs, analysis and report re-emission.

    python app.py gen     --spec SPEC.yaml --out TRACES/
    python app.py run     --plan PLAN.yaml --out matrix.csv [--workers N]
    python app.py analyze --matrix matrix.csv --out REPORT/ [--baseline ID] [--ks 1,2,3]
    python app.py report  --in REPORT/ --format {csv,json} [--out DIR]
    python app.py bias    --trace T --policy ID --lengths 20000,200000

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""
import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

import reports
from config import (
    DEFAULT_BASELINE, DEFAULT_HIERARCHY, DEFAULT_SUBSET_KS, DEFAULT_TIMING, default_workers, load_plan,
    load_sources, plan_baseline, setup_logging,
)
from harness import load_matrix, measure_truncation_bias, run_experiment, save_matrix
from models import PhasesimError, PolicyConfig, ValidationError
from traces import generate_trace, read_trace, write_trace

logger = logging.getLogger(__name__)

TRACE_SUFFIX = ".trace"
EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems as exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _int_list(text, name):
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValidationError(f"--{name}: expected comma-separated integers, got {text!r}", name) from None
    if not values:
        raise ValidationError(f"--{name}: at least one value is required", name)
    return values


def cmd_gen(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for source in load_sources(args.spec):
        if source.synthetic is None:
            logger.warning("%s: benchmark reads an existing trace file, nothing to generate", source.benchmark_id)
            continue
        path = out / f"{source.benchmark_id}{TRACE_SUFFIX}"
        trace = generate_trace(source.synthetic)
        write_trace(trace, path)
        logger.info("wrote %s (%d records)", path, len(trace))
    return EXIT_OK


def cmd_run(args):
    plan = load_plan(args.plan)
    workers = default_workers() if args.workers is None else args.workers
    matrix = run_experiment(plan, workers=workers)
    save_matrix(matrix, args.out)
    return EXIT_OK


def cmd_analyze(args):
    matrix = load_matrix(args.matrix)
    baseline = args.baseline
    if baseline is None and args.plan:
        baseline = plan_baseline(args.plan)
    if baseline is None:
        baseline = DEFAULT_BASELINE
    ks = _int_list(args.ks, "ks") if args.ks else DEFAULT_SUBSET_KS
    bundle = reports.build_report(matrix, baseline=baseline, ks=ks, objective=args.objective)
    reports.write_bundle(bundle, args.out, args.format, args.precision)
    if not args.no_plots:
        reports.emit_plot_data(bundle, Path(args.out) / "plots", args.precision)
    return EXIT_OK


def cmd_report(args):
    bundle = reports.read_bundle(args.input)
    if args.out:
        reports.write_bundle(bundle, args.out, args.format, args.precision)
    else:
        sys.stdout.write(reports.render_bundle(bundle, args.format, args.precision))
    return EXIT_OK


def _load_bias_trace(path):
    """A binary trace file, or a YAML synthetic spec generated on the fly."""
    if Path(path).suffix in (".yaml", ".yml"):
        sources = load_sources(path)
        if len(sources) != 1 or sources[0].synthetic is None:
            raise ValidationError(f"{path}: expected exactly one synthetic benchmark", "trace")
        return generate_trace(sources[0].synthetic)
    return read_trace(path)


def cmd_bias(args):
    policy = PolicyConfig.parse(args.policy)
    lengths = _int_list(args.lengths, "lengths")
    timing, hierarchy = DEFAULT_TIMING, DEFAULT_HIERARCHY
    if args.plan:
        plan = load_plan(args.plan)
        timing, hierarchy = plan.timing, plan.hierarchy
    trace = _load_bias_trace(args.trace)
    points = measure_truncation_bias(trace, policy, timing, lengths, hierarchy, warmup=args.warmup)
    frame = pd.DataFrame([{"chunk_len": p.chunk_len, "chunks": p.chunks, "gap_pct": p.gap_pct} for p in points])
    text = reports.format_frame(frame, args.precision).to_csv(index=False, lineterminator="\n")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    parser = CliParser(prog="phasesim", description="Cache/prefetch policy simulator and limit-study analytics")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    parser.add_argument("--log-level", help="explicit log level (overrides -v and PHASESIM_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write synthetic trace files")
    gen.add_argument("--spec", required=True, help="synthetic spec or plan YAML")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(handler=cmd_gen)

    run = sub.add_parser("run", help="simulate every (benchmark, timestep, policy) cell")
    run.add_argument("--plan", required=True)
    run.add_argument("--out", required=True, help="matrix CSV path")
    run.add_argument("--workers", type=int, help="process count (default: PHASESIM_WORKERS, else serial)")
    run.set_defaults(handler=cmd_run)

    analyze = sub.add_parser("analyze", help="build the report bundle from a matrix CSV")
    analyze.add_argument("--matrix", required=True)
    analyze.add_argument("--out", required=True, help="report directory")
    analyze.add_argument("--baseline", help=f"baseline policy id (default {DEFAULT_BASELINE})")
    analyze.add_argument("--plan", help="plan YAML whose `baseline` field to use")
    analyze.add_argument("--ks", help="comma-separated subset sizes (default 1,2,3)")
    analyze.add_argument("--objective", choices=("loss", "ipc"), default="loss")
    analyze.add_argument("--format", choices=reports.FORMATS, default="csv")
    analyze.add_argument("--precision", type=int, default=reports.DEFAULT_PRECISION)
    analyze.add_argument("--no-plots", action="store_true", help="skip the per-figure CSVs")
    analyze.set_defaults(handler=cmd_analyze)

    report = sub.add_parser("report", help="re-emit a report bundle")
    report.add_argument("--in", dest="input", required=True, help="report directory")
    report.add_argument("--format", choices=reports.FORMATS, default="csv")
    report.add_argument("--out", help="output directory (default: stdout)")
    report.add_argument("--precision", type=int, default=reports.DEFAULT_PRECISION)
    report.set_defaults(handler=cmd_report)

    bias = sub.add_parser("bias", help="measure history-truncation bias")
    bias.add_argument("--trace", required=True, help="trace file or single synthetic spec YAML")
    bias.add_argument("--policy", required=True, help="policy id l1d/l1i/l2")
    bias.add_argument("--lengths", required=True, help="comma-separated chunk lengths")
    bias.add_argument("--plan", help="plan YAML to take timing and hierarchy from")
    bias.add_argument("--warmup", type=int, default=0)
    bias.add_argument("--out", help="CSV path (default: stdout)")
    bias.add_argument("--precision", type=int, default=reports.DEFAULT_PRECISION)
    bias.set_defaults(handler=cmd_bias)
    return parser


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_INVALID
    except SystemExit as exc:
        # --help
        return exc.code or EXIT_OK

    level = args.log_level or {0: None, 1: "INFO"}.get(args.verbose, "DEBUG")
    try:
        setup_logging(level)
        return args.handler(args)
    except PhasesimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(cli_main())
