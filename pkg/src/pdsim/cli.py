"""Command line entry points.

    pdsim fit <samples> [--out cfg]        fit the prefill cost model
    pdsim run <trace> [options]            simulate one run, write outputs
    pdsim compare <trace> [options]        strategies x rates summary CSV
    pdsim sweep <trace> [options]          max sustainable rate for a strategy
    pdsim stats <trace>                    workload statistics

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from .cost_model import ProfilingSample, fit_quadratic, fit_residual_rms
from .engine import default_run_config, load_run_config, run, scale_trace
from .report import compute_metrics, run_rate_sweep, sweep_max_rate, write_outputs
from .scheduler import SchedulerConfig, Strategy
from .traces import load_trace, native_rate, trace_stats

COMPARE_CSV_FIELDS = ("strategy", "rate", "attainment", "p90_ttft", "p90_tpot")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_samples(path: Path) -> list[ProfilingSample]:
    samples = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"input_len", "measured_time"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected CSV columns input_len,measured_time")
        for lineno, row in enumerate(reader, start=2):
            try:
                samples.append(
                    ProfilingSample(int(row["input_len"]), float(row["measured_time"]))
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return samples


def _config_from_args(args) -> "RunConfig":
    config = load_run_config(args.config) if args.config else default_run_config()
    if getattr(args, "strategy", None):
        scheduler = dataclasses.replace(config.scheduler, strategy=Strategy(args.strategy))
        config = dataclasses.replace(config, scheduler=scheduler)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def cmd_fit(args) -> int:
    samples = _load_samples(Path(args.samples))
    params = fit_quadratic(samples)
    rms = fit_residual_rms(params, samples)
    print(f"a2 = {params.a2!r}")
    print(f"a1 = {params.a1!r}")
    print(f"a0 = {params.a0!r}")
    print(f"# rms residual: {rms!r} s over {len(samples)} samples")
    if args.out:
        with open(args.out, "w") as f:
            f.write(f"a2 = {params.a2!r}\na1 = {params.a1!r}\na0 = {params.a0!r}\n")
    return 0


def cmd_run(args) -> int:
    config = _config_from_args(args)
    trace = load_trace(args.trace)
    if args.rate_scale != 1.0:
        trace = scale_trace(trace, args.rate_scale)
    result = run(trace, config)
    paths = write_outputs(result, config.slo, args.out_dir, decisions=True)
    if result.records:
        summary = compute_metrics(result.records, config.slo)
        print(
            f"{len(result.records)} requests: attainment {summary.attainment:.4f}, "
            f"p90 ttft {summary.p90_ttft:.4f} s, p90 tpot {summary.p90_tpot:.4f} s, "
            f"goodput {summary.goodput:.3f} req/s"
        )
    else:
        print("0 requests")
    print(f"outputs in {Path(args.out_dir)}")
    return 0


def cmd_compare(args) -> int:
    trace = load_trace(args.trace)
    strategies = [Strategy(s) for s in args.strategies]
    rows = []
    for strategy in strategies:
        args.strategy = strategy.value
        config = _config_from_args(args)
        for rate, summary in run_rate_sweep(trace, config, args.rates):
            rows.append((strategy.value, rate, summary))
            print(
                f"{strategy.value:>12} @ {rate:g} req/s: attainment {summary.attainment:.4f}, "
                f"p90 ttft {summary.p90_ttft:.4f}, p90 tpot {summary.p90_tpot:.4f}"
            )
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(COMPARE_CSV_FIELDS)
        for strategy_name, rate, summary in rows:
            writer.writerow(
                [strategy_name, repr(rate), repr(summary.attainment), repr(summary.p90_ttft), repr(summary.p90_tpot)]
            )
    print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    trace = load_trace(args.trace)
    config = _config_from_args(args)
    best, results = sweep_max_rate(trace, config, args.rates)
    for rate, summary in results:
        marker = "ok " if summary.attainment >= config.slo.attainment_target else "MISS"
        print(f"  {rate:8g} req/s  attainment {summary.attainment:.4f}  [{marker}]")
    if best is None:
        print(f"no grid rate reaches attainment {config.slo.attainment_target}")
    else:
        print(f"max sustainable rate: {best:g} req/s at attainment target {config.slo.attainment_target}")
    return 0


def cmd_stats(args) -> int:
    trace = load_trace(args.trace)
    stats = trace_stats(trace, bucket_s=args.bucket)
    print(f"requests: {stats.num_requests}")
    print(f"span: {stats.duration_s:.1f} s, mean rate {stats.mean_rate:.3f} req/s")
    print(f"input tokens p50/p90/p99: {stats.input_percentiles[50]}/{stats.input_percentiles[90]}/{stats.input_percentiles[99]}")
    print(f"output tokens p50/p90/p99: {stats.output_percentiles[50]}/{stats.output_percentiles[90]}/{stats.output_percentiles[99]}")
    print(f"bucket c_v (input/output tokens, {args.bucket:g} s buckets): "
          f"{stats.input_bucket_cv:.3f}/{stats.output_bucket_cv:.3f}")
    print(f"input-output length correlation: {stats.io_correlation:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdsim", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the quadratic prefill model to profiling samples")
    p_fit.add_argument("samples", help="CSV with columns input_len,measured_time")
    p_fit.add_argument("--out", help="write fitted coefficients as config lines")
    p_fit.set_defaults(func=cmd_fit)

    p_run = sub.add_parser("run", help="simulate one run")
    p_run.add_argument("trace", help="trace file (.jsonl or .csv)")
    p_run.add_argument("--config", help="config file (key = value lines)")
    p_run.add_argument("--out-dir", required=True, help="directory for output files")
    p_run.add_argument("--strategy", choices=[s.value for s in Strategy])
    p_run.add_argument("--rate-scale", type=float, default=1.0,
                       help="multiply arrival timestamps by this factor (<1 raises the rate)")
    p_run.add_argument("--seed", type=int)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare strategies over a rate grid")
    p_cmp.add_argument("trace")
    p_cmp.add_argument("--config")
    p_cmp.add_argument("--rates", type=float, nargs="+", required=True, help="target request rates (req/s)")
    p_cmp.add_argument("--strategies", nargs="+", default=[s.value for s in Strategy],
                       choices=[s.value for s in Strategy])
    p_cmp.add_argument("--out", required=True, help="summary CSV path")
    p_cmp.add_argument("--seed", type=int)
    p_cmp.set_defaults(func=cmd_compare)

    p_sw = sub.add_parser("sweep", help="find the max sustainable rate at the attainment target")
    p_sw.add_argument("trace")
    p_sw.add_argument("--config")
    p_sw.add_argument("--rates", type=float, nargs="+", required=True)
    p_sw.add_argument("--strategy", choices=[s.value for s in Strategy])
    p_sw.add_argument("--seed", type=int)
    p_sw.set_defaults(func=cmd_sweep)

    p_st = sub.add_parser("stats", help="workload statistics")
    p_st.add_argument("trace")
    p_st.add_argument("--bucket", type=float, default=60.0, help="bucket width in seconds")
    p_st.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"pdsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
