"""Periodic cluster observation: per-instance load, health, and pool state.

Snapshots are pure reads; collecting twice at the same instant yields the
same values.  The scheduler consumes them for its flip triggers and the run
report exports them as the monitor time series.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .core import PoolKind, SimTime
from .cost_model import PrefillCostParams
from .instance import Instance
from .pools import PoolSet


@dataclass(frozen=True)
class InstanceStats:
    instance_id: int
    pool: PoolKind
    running_tokens: int
    kv_used: int
    queue_len: int
    pred_delay: float
    avg_interval: float | None
    prefill_count: int
    decode_count: int


@dataclass(frozen=True)
class MonitorSnapshot:
    time: SimTime
    per_instance: tuple[InstanceStats, ...]

    def pool_counts(self) -> dict[PoolKind, int]:
        counts = {kind: 0 for kind in PoolKind}
        for stats in self.per_instance:
            counts[stats.pool] += 1
        return counts


class Monitor:
    """Collects snapshots with a fixed predictor and interval window."""

    def __init__(self, predictor: PrefillCostParams, interval_window: float, period: float):
        if interval_window <= 0:
            raise ValueError(f"interval_window must be positive, got {interval_window}")
        if period <= 0:
            raise ValueError(f"period must be positive, got {period}")
        self.predictor = predictor
        self.interval_window = interval_window
        self.period = period

    def collect(self, instances: Mapping[int, Instance], pools: PoolSet, now: SimTime) -> MonitorSnapshot:
        stats = []
        for instance_id in sorted(instances):
            inst = instances[instance_id]
            stats.append(
                InstanceStats(
                    instance_id=instance_id,
                    pool=pools.pool_of(instance_id),
                    running_tokens=inst.running_tokens(),
                    kv_used=inst.kv_used,
                    queue_len=inst.prefill_queue_len(),
                    pred_delay=inst.predicted_prefill_delay(self.predictor, now),
                    avg_interval=inst.avg_token_interval(self.interval_window, now),
                    prefill_count=inst.prefill_count(),
                    decode_count=inst.decode_count(),
                )
            )
        return MonitorSnapshot(time=now, per_instance=tuple(stats))
