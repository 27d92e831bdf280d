"""Workload traces: canonical serialization, synthetic generation, statistics.

The canonical trace schema is one record per request with `arrival_s`
(float seconds), `input_tokens`, and `output_tokens`; request ids are
assigned by arrival order at load time.  JSONL is the primary format, CSV an
equivalent alternative with the same field names.  Real request logs in other
shapes are expected to be converted to this schema by small external
adapters rather than format-specific loaders here.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import TraceRequest

_FIELDS = ("arrival_s", "input_tokens", "output_tokens")


class TraceFormatError(ValueError):
    pass


def _build(rows: list[tuple[float, int, int]], source: str) -> list[TraceRequest]:
    order = sorted(range(len(rows)), key=lambda i: (rows[i][0], i))
    trace = []
    for new_id, i in enumerate(order):
        arrival, input_tokens, output_tokens = rows[i]
        try:
            trace.append(TraceRequest(new_id, arrival, input_tokens, output_tokens))
        except ValueError as exc:
            raise TraceFormatError(f"{source}: record {i + 1}: {exc}") from exc
    return trace


def load_trace(path: str | Path, fmt: str | None = None) -> list[TraceRequest]:
    """Load a trace file; format inferred from the extension unless given."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if fmt not in ("jsonl", "csv"):
        raise TraceFormatError(f"unsupported trace format {fmt!r}")
    rows: list[tuple[float, int, int]] = []
    if fmt == "jsonl":
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    rows.append(
                        (float(obj["arrival_s"]), int(obj["input_tokens"]), int(obj["output_tokens"]))
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise TraceFormatError(f"{path}:{lineno}: {exc}") from exc
    else:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != list(_FIELDS):
                raise TraceFormatError(
                    f"{path}: expected header {','.join(_FIELDS)}, got {reader.fieldnames}"
                )
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append(
                        (float(row["arrival_s"]), int(row["input_tokens"]), int(row["output_tokens"]))
                    )
                except (TypeError, ValueError) as exc:
                    raise TraceFormatError(f"{path}:{lineno}: {exc}") from exc
    return _build(rows, str(path))


def save_trace(trace: list[TraceRequest], path: str | Path, fmt: str | None = None) -> None:
    """Serialize a trace in canonical order; load(save(t)) is the identity."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    ordered = sorted(trace, key=lambda r: (r.arrival, r.id))
    if fmt == "jsonl":
        with open(path, "w") as f:
            for r in ordered:
                f.write(
                    json.dumps(
                        {"arrival_s": r.arrival, "input_tokens": r.input_len, "output_tokens": r.output_len}
                    )
                    + "\n"
                )
    elif fmt == "csv":
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(_FIELDS)
            for r in ordered:
                # float() strips numpy scalar types whose repr is not a literal
                writer.writerow([repr(float(r.arrival)), r.input_len, r.output_len])
    else:
        raise TraceFormatError(f"unsupported trace format {fmt!r}")


# -- synthetic workloads -------------------------------------------------


@dataclass(frozen=True)
class BurstEpisode:
    """Interval [start, start + duration) during which the arrival rate is
    multiplied by `multiplier`."""

    start: float
    duration: float
    multiplier: float

    def __post_init__(self) -> None:
        if self.duration <= 0 or self.multiplier <= 0:
            raise ValueError("burst duration and multiplier must be positive")


@dataclass(frozen=True)
class SyntheticParams:
    """Poisson arrivals with burst episodes; log-normal token lengths."""

    duration_s: float
    base_rate: float  # requests per second outside bursts
    input_log_mean: float
    input_log_sigma: float
    output_log_mean: float
    output_log_sigma: float
    bursts: tuple[BurstEpisode, ...] = ()
    max_input: int = 16384
    max_output: int = 4096
    seed: int = 0

    def __post_init__(self) -> None:
        if self.duration_s < 0:
            raise ValueError("duration_s must be >= 0")
        if self.base_rate <= 0:
            raise ValueError("base_rate must be positive")
        if self.input_log_sigma < 0 or self.output_log_sigma < 0:
            raise ValueError("log sigmas must be >= 0")


def _rate_at(params: SyntheticParams, t: float) -> float:
    rate = params.base_rate
    for ep in params.bursts:
        if ep.start <= t < ep.start + ep.duration:
            rate *= ep.multiplier
    return rate


def _draw_length(rng: np.random.Generator, log_mean: float, log_sigma: float, max_len: int) -> int:
    x = math.exp(rng.normal(log_mean, log_sigma))
    return int(min(max(round(x), 1), max_len))


def gen_synthetic(params: SyntheticParams) -> list[TraceRequest]:
    """Generate a trace by thinning a homogeneous Poisson process, which keeps
    burst boundaries exact rather than approximated at gap granularity."""
    rng = np.random.default_rng(params.seed)
    rate_max = params.base_rate * max((ep.multiplier for ep in params.bursts), default=1.0)
    trace: list[TraceRequest] = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate_max)
        if t >= params.duration_s:
            break
        if rng.random() * rate_max > _rate_at(params, t):
            continue
        input_len = _draw_length(rng, params.input_log_mean, params.input_log_sigma, params.max_input)
        output_len = _draw_length(rng, params.output_log_mean, params.output_log_sigma, params.max_output)
        trace.append(TraceRequest(len(trace), float(t), input_len, output_len))
    return trace


# -- statistics ----------------------------------------------------------


@dataclass(frozen=True)
class BucketStats:
    index: int
    requests: int
    input_tokens: int
    output_tokens: int


@dataclass(frozen=True)
class TraceStats:
    num_requests: int
    duration_s: float
    mean_rate: float
    buckets: tuple[BucketStats, ...]
    input_bucket_cv: float
    output_bucket_cv: float
    io_correlation: float
    input_percentiles: dict[int, int] = field(default_factory=dict)
    output_percentiles: dict[int, int] = field(default_factory=dict)


def trace_stats(trace: list[TraceRequest], bucket_s: float = 60.0) -> TraceStats:
    """Per-bucket arrival totals plus the dispersion and correlation numbers
    used to characterize workload diversity.

    The coefficient of variation is over per-bucket input token totals
    (empty buckets inside the span count as zero); the correlation is the
    Pearson r between per-request input and output lengths.
    """
    if not trace:
        raise ValueError("empty trace")
    if bucket_s <= 0:
        raise ValueError("bucket_s must be positive")
    first = min(r.arrival for r in trace)
    last = max(r.arrival for r in trace)
    lo = int(first // bucket_s)
    hi = int(last // bucket_s)
    totals = {i: [0, 0, 0] for i in range(lo, hi + 1)}
    for r in trace:
        b = totals[int(r.arrival // bucket_s)]
        b[0] += 1
        b[1] += r.input_len
        b[2] += r.output_len
    buckets = tuple(
        BucketStats(i, totals[i][0], totals[i][1], totals[i][2]) for i in range(lo, hi + 1)
    )

    def cv(values: list[int]) -> float:
        arr = np.array(values, dtype=float)
        mean = arr.mean()
        return float(arr.std() / mean) if mean > 0 else 0.0

    inputs = np.array([r.input_len for r in trace], dtype=float)
    outputs = np.array([r.output_len for r in trace], dtype=float)
    if len(trace) >= 2 and inputs.std() > 0 and outputs.std() > 0:
        corr = float(np.corrcoef(inputs, outputs)[0, 1])
    else:
        corr = 0.0
    duration = last - first
    return TraceStats(
        num_requests=len(trace),
        duration_s=duration,
        mean_rate=(len(trace) - 1) / duration if duration > 0 else math.inf,
        buckets=buckets,
        input_bucket_cv=cv([b.input_tokens for b in buckets]),
        output_bucket_cv=cv([b.output_tokens for b in buckets]),
        io_correlation=corr,
        input_percentiles={p: int(np.percentile(inputs, p)) for p in (50, 90, 99)},
        output_percentiles={p: int(np.percentile(outputs, p)) for p in (50, 90, 99)},
    )


def native_rate(trace: list[TraceRequest]) -> float:
    """Mean arrival rate of a trace, used as the reference when rescaling to
    a target request rate."""
    if len(trace) < 2:
        raise ValueError("need at least 2 requests to define a rate")
    span = trace[-1].arrival - trace[0].arrival
    if span <= 0:
        raise ValueError("trace span must be positive to define a rate")
    return (len(trace) - 1) / span


# -- reference workloads -------------------------------------------------


def bundled_bursty_trace() -> list[TraceRequest]:
    """Bursty mixed workload used by the comparison tests and docs: steady
    background arrivals with three episodes at 4x the base rate or more."""
    params = SyntheticParams(
        duration_s=360.0,
        base_rate=4.0,
        input_log_mean=math.log(420.0),
        input_log_sigma=0.55,
        output_log_mean=math.log(130.0),
        output_log_sigma=0.5,
        bursts=(
            BurstEpisode(start=50.0, duration=25.0, multiplier=5.0),
            BurstEpisode(start=150.0, duration=30.0, multiplier=4.0),
            BurstEpisode(start=260.0, duration=25.0, multiplier=5.0),
        ),
        max_input=3500,
        max_output=900,
        seed=20240817,
    )
    return gen_synthetic(params)


def bundled_ramp_trace() -> list[TraceRequest]:
    """Ramp-up workload: the arrival rate climbs in steps and falls back,
    with long outputs so decode load trails prefill load."""
    params = SyntheticParams(
        duration_s=300.0,
        base_rate=1.0,
        input_log_mean=math.log(500.0),
        input_log_sigma=0.4,
        output_log_mean=math.log(350.0),
        output_log_sigma=0.35,
        bursts=(
            BurstEpisode(start=60.0, duration=40.0, multiplier=2.0),
            BurstEpisode(start=100.0, duration=40.0, multiplier=4.0),
            BurstEpisode(start=140.0, duration=40.0, multiplier=6.0),
            BurstEpisode(start=180.0, duration=30.0, multiplier=3.0),
        ),
        max_input=3000,
        max_output=1200,
        seed=7,
    )
    return gen_synthetic(params)
