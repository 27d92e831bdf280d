"""Shared value types and latency metric definitions.

A request moves through two phases: a prefill phase that processes the whole
prompt and emits the first output token, and a decode phase that emits the
remaining tokens one iteration at a time.  Everything downstream (instances,
schedulers, reports) speaks in terms of the types defined here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

SimTime = float
"""Simulated wall-clock time in seconds."""


class Phase(Enum):
    PREFILL = "prefill"
    DECODE = "decode"


class PoolKind(Enum):
    """Role pools an instance can belong to.

    P_TO_D marks an instance that has been scheduled for decode work but is
    still draining its prefill queue; D_TO_P is the symmetric case.
    """

    PREFILL = "prefill"
    DECODE = "decode"
    P_TO_D = "p_to_d"
    D_TO_P = "d_to_p"


@dataclass(frozen=True)
class TraceRequest:
    """One request from a workload trace."""

    id: int
    arrival: SimTime
    input_len: int
    output_len: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.arrival) or self.arrival < 0:
            raise ValueError(f"arrival must be finite and >= 0, got {self.arrival}")
        if self.input_len < 1:
            raise ValueError(f"input_len must be >= 1, got {self.input_len}")
        if self.output_len < 1:
            raise ValueError(f"output_len must be >= 1, got {self.output_len}")


@dataclass(frozen=True)
class SLOConfig:
    """Latency targets a request must meet to count as attained."""

    ttft_slo: float
    tpot_slo: float
    attainment_target: float = 0.9

    def __post_init__(self) -> None:
        if self.ttft_slo <= 0 or self.tpot_slo <= 0:
            raise ValueError("ttft_slo and tpot_slo must be positive")
        if not 0 < self.attainment_target <= 1:
            raise ValueError(f"attainment_target must be in (0, 1], got {self.attainment_target}")


@dataclass(eq=False)
class PhaseRequest:
    """Per-phase view of a request while it is resident on one instance.

    `tokens_generated` counts tokens emitted by decode iterations; the first
    output token is produced by the prefill phase and is not included, so a
    decode phase finishes when 1 + tokens_generated == output_len.
    `kv_held` tracks the KV tokens this request currently occupies on its
    instance and is maintained by the instance, not by callers.
    """

    request_id: int
    phase: Phase
    prompt_len: int
    output_len: int
    tokens_generated: int = 0
    prefill_done: int = 0
    kv_source: int | None = None
    kv_held: int = field(default=0, repr=False)


@dataclass
class RequestRecord:
    """Completed-request latency record."""

    request_id: int
    arrival: SimTime
    first_token_time: SimTime
    token_times: list[SimTime]
    ttft: float
    tpot: float
    ttft_ok: bool
    tpot_ok: bool
    slo_ok: bool

    @classmethod
    def from_token_times(
        cls,
        request_id: int,
        arrival: SimTime,
        token_times: list[SimTime],
        slo: SLOConfig,
    ) -> "RequestRecord":
        rec = cls(
            request_id=request_id,
            arrival=arrival,
            first_token_time=token_times[0] if token_times else math.nan,
            token_times=list(token_times),
            ttft=0.0,
            tpot=0.0,
            ttft_ok=False,
            tpot_ok=False,
            slo_ok=False,
        )
        rec.ttft = compute_ttft(rec)
        rec.tpot = compute_tpot(rec)
        rec.ttft_ok = rec.ttft <= slo.ttft_slo
        rec.tpot_ok = rec.tpot <= slo.tpot_slo
        rec.slo_ok = rec.ttft_ok and rec.tpot_ok
        return rec


def compute_ttft(record: RequestRecord) -> float:
    """Time from arrival to the first emitted token."""
    if not record.token_times:
        raise ValueError(f"request {record.request_id} has no emitted tokens")
    first = record.token_times[0]
    if first < record.arrival:
        raise ValueError(
            f"request {record.request_id}: first token at {first} precedes arrival {record.arrival}"
        )
    return first - record.arrival


def compute_tpot(record: RequestRecord) -> float:
    """Mean gap between consecutive output tokens.

    Defined as (t_m - t_1) / (m - 1) over the m emission timestamps, which
    equals the mean of the m - 1 individual gaps.  A single-token request has
    no gaps and scores 0 by convention, so it can only miss its SLO via TTFT.
    """
    m = len(record.token_times)
    if m == 0:
        raise ValueError(f"request {record.request_id} has no emitted tokens")
    if m == 1:
        return 0.0
    return (record.token_times[-1] - record.token_times[0]) / (m - 1)
