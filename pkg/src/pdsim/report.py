"""Run metrics, rate sweeps, and output file writing.

Percentiles use the nearest-rank definition (no interpolation): the p-th
percentile of n values is the value at rank ceil(p * n) in sorted order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .core import RequestRecord, SLOConfig
from .engine import RunConfig, RunResult, run, scale_trace
from .monitor import MonitorSnapshot
from .traces import TraceRequest, native_rate


def percentile_nearest_rank(values: list[float], q: float) -> float:
    if not values:
        raise ValueError("cannot take a percentile of no values")
    if not 0 < q <= 1:
        raise ValueError(f"q must be in (0, 1], got {q}")
    ordered = sorted(values)
    rank = max(math.ceil(q * len(ordered)), 1)
    return ordered[rank - 1]


@dataclass(frozen=True)
class RunSummary:
    attainment: float
    p90_ttft: float
    p90_tpot: float
    mean_ttft: float
    mean_tpot: float
    goodput: float
    num_requests: int
    span_s: float

    def to_dict(self) -> dict:
        return {
            "attainment": self.attainment,
            "p90_ttft": self.p90_ttft,
            "p90_tpot": self.p90_tpot,
            "mean_ttft": self.mean_ttft,
            "mean_tpot": self.mean_tpot,
            "goodput": self.goodput,
            "num_requests": self.num_requests,
            "span_s": self.span_s,
        }


def compute_metrics(records: list[RequestRecord], slo: SLOConfig) -> RunSummary:
    """Aggregate a run's records.  Goodput is SLO-attaining requests per
    second of span, span being first arrival to last completion."""
    if not records:
        raise ValueError("no records to summarize")
    n = len(records)
    n_ok = sum(1 for r in records if r.slo_ok)
    ttfts = [r.ttft for r in records]
    tpots = [r.tpot for r in records]
    span = max(r.token_times[-1] for r in records) - min(r.arrival for r in records)
    return RunSummary(
        attainment=n_ok / n,
        p90_ttft=percentile_nearest_rank(ttfts, 0.9),
        p90_tpot=percentile_nearest_rank(tpots, 0.9),
        mean_ttft=sum(ttfts) / n,
        mean_tpot=sum(tpots) / n,
        goodput=n_ok / span if span > 0 else math.inf,
        num_requests=n,
        span_s=span,
    )


def run_rate_sweep(
    trace: list[TraceRequest], config: RunConfig, rates: list[float]
) -> list[tuple[float, RunSummary]]:
    """Simulate the trace rescaled to each target rate (requests/second)."""
    if not rates:
        raise ValueError("empty rate grid")
    if any(r <= 0 for r in rates):
        raise ValueError("rates must be positive")
    base = native_rate(trace)
    results = []
    for rate in sorted(rates):
        scaled = scale_trace(trace, base / rate)
        result = run(scaled, config)
        results.append((rate, compute_metrics(result.records, config.slo)))
    return results


def max_qualifying_rate(results: list[tuple[float, RunSummary]], target: float) -> float | None:
    """Largest swept rate whose attainment meets the target; None if none do."""
    best = None
    for rate, summary in results:
        if summary.attainment >= target:
            best = rate if best is None else max(best, rate)
    return best


def sweep_max_rate(
    trace: list[TraceRequest], config: RunConfig, rates: list[float]
) -> tuple[float | None, list[tuple[float, RunSummary]]]:
    """Largest grid rate whose attainment meets the configured target, with
    the per-rate summaries; None when no grid rate qualifies."""
    results = run_rate_sweep(trace, config, rates)
    return max_qualifying_rate(results, config.slo.attainment_target), results


# -- file outputs --------------------------------------------------------

REQUEST_CSV_FIELDS = ("request_id", "arrival_s", "ttft_s", "tpot_s", "ttft_ok", "tpot_ok", "slo_ok")
MONITOR_CSV_FIELDS = (
    "time",
    "instance_id",
    "pool",
    "running_tokens",
    "kv_used",
    "queue_len",
    "pred_delay",
    "avg_interval",
)


def _fmt_bool(value: bool) -> str:
    return "true" if value else "false"


def write_request_csv(records: list[RequestRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REQUEST_CSV_FIELDS)
        for r in records:
            # float() guards against numpy scalars, whose repr is not parseable
            writer.writerow(
                [
                    r.request_id,
                    repr(float(r.arrival)),
                    repr(float(r.ttft)),
                    repr(float(r.tpot)),
                    _fmt_bool(r.ttft_ok),
                    _fmt_bool(r.tpot_ok),
                    _fmt_bool(r.slo_ok),
                ]
            )


def read_request_csv(path: str | Path) -> list[dict]:
    """Reload a per-request CSV into plain dicts (typed fields)."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != REQUEST_CSV_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            rows.append(
                {
                    "request_id": int(row["request_id"]),
                    "arrival_s": float(row["arrival_s"]),
                    "ttft_s": float(row["ttft_s"]),
                    "tpot_s": float(row["tpot_s"]),
                    "ttft_ok": row["ttft_ok"] == "true",
                    "tpot_ok": row["tpot_ok"] == "true",
                    "slo_ok": row["slo_ok"] == "true",
                }
            )
    return rows


def write_monitor_csv(snapshots: list[MonitorSnapshot], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MONITOR_CSV_FIELDS)
        for snap in snapshots:
            for s in snap.per_instance:
                writer.writerow(
                    [
                        repr(float(snap.time)),
                        s.instance_id,
                        s.pool.value,
                        s.running_tokens,
                        s.kv_used,
                        s.queue_len,
                        repr(float(s.pred_delay)),
                        "" if s.avg_interval is None else repr(float(s.avg_interval)),
                    ]
                )


def write_summary_json(summary: RunSummary | None, path: str | Path) -> None:
    if summary is None:
        payload = {
            "attainment": None,
            "p90_ttft": None,
            "p90_tpot": None,
            "mean_ttft": None,
            "mean_tpot": None,
            "goodput": None,
            "num_requests": 0,
            "span_s": 0.0,
        }
    else:
        payload = summary.to_dict()
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def write_decision_log(decisions: list[dict], path: str | Path) -> None:
    with open(path, "w") as f:
        for record in decisions:
            f.write(json.dumps(record) + "\n")


def write_outputs(
    result: RunResult,
    slo: SLOConfig,
    out_dir: str | Path,
    decisions: bool = True,
) -> dict[str, Path]:
    """Write the standard output set for one run into a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "requests": out / "requests.csv",
        "summary": out / "summary.json",
        "monitor": out / "monitor.csv",
    }
    write_request_csv(result.records, paths["requests"])
    summary = compute_metrics(result.records, slo) if result.records else None
    write_summary_json(summary, paths["summary"])
    write_monitor_csv(result.snapshots, paths["monitor"])
    if decisions:
        paths["decisions"] = out / "decisions.jsonl"
        write_decision_log(result.decisions, paths["decisions"])
    return paths
