"""Global request dispatch and elastic instance scheduling.

The SLO-aware strategy picks targets by predicted latency headroom instead of
raw load, and reshapes the cluster by flipping instances between roles when a
phase is about to violate its SLO.  Overload handling is asymmetric on
purpose: a prefill instance is handed to decode without checking prefill
load, while a decode instance is only handed to prefill when decode load is
demonstrably low.  Two static baselines (minimal-load, round-robin) share the
same dispatch interface so runs differ only in strategy.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping

from .core import Phase, PhaseRequest, PoolKind, SLOConfig, SimTime, TraceRequest
from .cost_model import PrefillCostParams, predict_prefill_time
from .instance import Instance
from .monitor import MonitorSnapshot
from .pools import PoolSet


class Strategy(Enum):
    SLO_AWARE = "slo-aware"
    MINIMAL_LOAD = "minimal-load"
    ROUND_ROBIN = "round-robin"


@dataclass(frozen=True)
class SchedulerConfig:
    strategy: Strategy = Strategy.SLO_AWARE
    ttft_threshold: float | None = None  # defaults to the TTFT SLO
    tpot_threshold: float | None = None  # defaults to the TPOT SLO
    theta_d: float = 0.5  # decode load fraction below which decode->prefill flips are allowed
    theta_busy: float = 0.75  # decode load fraction above which idle prefill instances flip
    tpot_breach_duration_s: float | None = None  # defaults to two monitor periods
    enable_flips: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.theta_d <= 1:
            raise ValueError(f"theta_d must be in (0, 1], got {self.theta_d}")
        if not 0 < self.theta_busy <= 1:
            raise ValueError(f"theta_busy must be in (0, 1], got {self.theta_busy}")


class GlobalScheduler:
    """Dispatches phase requests to instances and manages pool flips.

    Appends one record per dispatch and per flip to `decisions`; the record's
    `branch` / `trigger` field names the rule that fired, so a decision log
    replays the exact control path of a run.
    """

    def __init__(
        self,
        pools: PoolSet,
        instances: Mapping[int, Instance],
        predictor: PrefillCostParams,
        slo: SLOConfig,
        max_tokens: int,
        config: SchedulerConfig,
        monitor_period: float,
        interval_window: float,
    ):
        self.pools = pools
        self.instances = instances
        self.predictor = predictor
        self.slo = slo
        self.max_tokens = max_tokens
        self.config = config
        self.monitor_period = monitor_period
        self.interval_window = interval_window
        self.ttft_threshold = config.ttft_threshold if config.ttft_threshold is not None else slo.ttft_slo
        self.tpot_threshold = config.tpot_threshold if config.tpot_threshold is not None else slo.tpot_slo
        self.breach_duration = (
            config.tpot_breach_duration_s
            if config.tpot_breach_duration_s is not None
            else 2 * monitor_period
        )
        self.decisions: list[dict] = []
        self._breach_s = 0.0
        self._rr_prefill = 0
        self._rr_decode = 0

    # -- helpers ---------------------------------------------------------

    def _argmin(
        self, ids: tuple[int, ...], key: Callable[[Instance], float]
    ) -> tuple[int | None, float]:
        """First-minimal instance in pool insertion order."""
        best_id: int | None = None
        best_val = 0.0
        for instance_id in ids:
            value = key(self.instances[instance_id])
            if best_id is None or value < best_val:
                best_id, best_val = instance_id, value
        return best_id, best_val

    def _delay(self, inst: Instance, now: SimTime) -> float:
        return inst.predicted_prefill_delay(self.predictor, now)

    def _log_dispatch(self, kind: str, now: SimTime, request_id: int, instance_id: int, branch: str) -> None:
        self.decisions.append(
            {"time": now, "kind": kind, "request_id": request_id, "instance": instance_id, "branch": branch}
        )

    def _log_flip(self, now: SimTime, instance_id: int, src: PoolKind, dst: PoolKind, trigger: str) -> None:
        self.decisions.append(
            {
                "time": now,
                "kind": "flip",
                "instance": instance_id,
                "from": src.value,
                "to": dst.value,
                "trigger": trigger,
            }
        )

    def note_drained(self, now: SimTime, instance_id: int, src: PoolKind, dst: PoolKind) -> None:
        self._log_flip(now, instance_id, src, dst, "drained")

    def _pool_mean_interval(self, now: SimTime) -> float | None:
        """Mean token interval over decode-role instances; None when no
        instance has enough recent emissions to report one."""
        values = []
        for instance_id in self.pools.members(PoolKind.DECODE) + self.pools.members(PoolKind.P_TO_D):
            interval = self.instances[instance_id].avg_token_interval(self.interval_window, now)
            if interval is not None:
                values.append(interval)
        if not values:
            return None
        return sum(values) / len(values)

    def decode_load_is_low(self, now: SimTime) -> bool:
        """True when decode can spare an instance: the least-loaded decode
        instance sits under theta_d of the token budget and the pool's token
        cadence is within the TPOT threshold."""
        ids = self.pools.members(PoolKind.DECODE) + self.pools.members(PoolKind.P_TO_D)
        if not ids:
            return False
        _, min_tokens = self._argmin(ids, lambda inst: inst.running_tokens())
        if min_tokens > self.config.theta_d * self.max_tokens:
            return False
        mean_interval = self._pool_mean_interval(now)
        return mean_interval is None or mean_interval <= self.tpot_threshold

    # -- prefill dispatch ------------------------------------------------

    def schedule_prefill(self, req: TraceRequest, now: SimTime) -> int:
        if self.config.strategy is Strategy.ROUND_ROBIN:
            pool = self.pools.members(PoolKind.PREFILL)
            chosen = pool[self._rr_prefill % len(pool)]
            self._rr_prefill += 1
            self._log_dispatch("prefill_dispatch", now, req.id, chosen, "round-robin")
            return chosen
        if self.config.strategy is Strategy.MINIMAL_LOAD:
            chosen, _ = self._argmin(
                self.pools.members(PoolKind.PREFILL), lambda inst: self._delay(inst, now)
            )
            self._log_dispatch("prefill_dispatch", now, req.id, chosen, "min-load")
            return chosen
        return self._schedule_prefill_slo_aware(req, now)

    def _schedule_prefill_slo_aware(self, req: TraceRequest, now: SimTime) -> int:
        own_time = predict_prefill_time(self.predictor, req.input_len)
        t1, d1 = self._argmin(self.pools.members(PoolKind.PREFILL), lambda inst: self._delay(inst, now))
        if t1 is not None and d1 + own_time <= self.ttft_threshold:
            self._log_dispatch("prefill_dispatch", now, req.id, t1, "alg1:t1")
            return t1
        t2, d2 = self._argmin(self.pools.members(PoolKind.D_TO_P), lambda inst: self._delay(inst, now))
        if t2 is not None and d2 + own_time <= self.ttft_threshold:
            self._log_dispatch("prefill_dispatch", now, req.id, t2, "alg1:t2")
            return t2
        if self.config.enable_flips and self.decode_load_is_low(now):
            t3 = self.try_move_decode_to_prefill(now, trigger="alg1")
            if t3 is not None:
                self._log_dispatch("prefill_dispatch", now, req.id, t3, "alg1:flip")
                return t3
        # No target meets the threshold: fall back to the least backlog.
        if t1 is not None:
            self._log_dispatch("prefill_dispatch", now, req.id, t1, "alg1:fallback")
            return t1
        if t2 is not None:
            self._log_dispatch("prefill_dispatch", now, req.id, t2, "alg1:fallback")
            return t2
        chosen, _ = self._argmin(
            self.pools.members(PoolKind.DECODE) + self.pools.members(PoolKind.P_TO_D),
            lambda inst: self._delay(inst, now),
        )
        if chosen is None:
            raise RuntimeError("no instance available for prefill dispatch")
        self._log_dispatch("prefill_dispatch", now, req.id, chosen, "alg1:degenerate")
        return chosen

    # -- decode dispatch -------------------------------------------------

    def schedule_decode(self, req: PhaseRequest, prefill_instance: int, now: SimTime) -> int:
        if self.config.strategy is Strategy.ROUND_ROBIN:
            pool = self.pools.members(PoolKind.DECODE)
            chosen = pool[self._rr_decode % len(pool)]
            self._rr_decode += 1
            self._log_dispatch("decode_dispatch", now, req.request_id, chosen, "round-robin")
            return chosen
        if self.config.strategy is Strategy.MINIMAL_LOAD:
            chosen, _ = self._argmin(
                self.pools.members(PoolKind.DECODE), lambda inst: inst.running_tokens()
            )
            self._log_dispatch("decode_dispatch", now, req.request_id, chosen, "min-load")
            return chosen
        return self._schedule_decode_slo_aware(req, prefill_instance, now)

    def _decode_admissible(self, instance_id: int, tokens: float, now: SimTime) -> bool:
        if tokens > self.max_tokens:
            return False
        interval = self.instances[instance_id].avg_token_interval(self.interval_window, now)
        return interval is None or interval <= self.tpot_threshold

    def _schedule_decode_slo_aware(self, req: PhaseRequest, prefill_instance: int, now: SimTime) -> int:
        # Zero-transfer path: the prefill instance already turned decode-role,
        # so its KV copy can be used in place.
        if self.pools.pool_of(prefill_instance) in (PoolKind.DECODE, PoolKind.P_TO_D):
            self._log_dispatch("decode_dispatch", now, req.request_id, prefill_instance, "alg2:zero-transfer")
            return prefill_instance
        t1, tok1 = self._argmin(
            self.pools.members(PoolKind.DECODE), lambda inst: inst.running_tokens()
        )
        if t1 is not None and self._decode_admissible(t1, tok1, now):
            self._log_dispatch("decode_dispatch", now, req.request_id, t1, "alg2:t1")
            return t1
        t2, tok2 = self._argmin(
            self.pools.members(PoolKind.P_TO_D), lambda inst: inst.running_tokens()
        )
        if t2 is not None and self._decode_admissible(t2, tok2, now):
            self._log_dispatch("decode_dispatch", now, req.request_id, t2, "alg2:t2")
            return t2
        if self.config.enable_flips:
            t3 = self.try_move_prefill_to_decode(now, trigger="alg2")
            if t3 is not None:
                self._log_dispatch("decode_dispatch", now, req.request_id, t3, "alg2:flip")
                return t3
        # Both candidates over their limits and no instance to move: pick the
        # lighter one anyway (t1 when the transition pool is empty).
        if t1 is not None and (t2 is None or tok1 <= tok2):
            self._log_dispatch("decode_dispatch", now, req.request_id, t1, "alg2:fallback")
            return t1
        if t2 is not None:
            self._log_dispatch("decode_dispatch", now, req.request_id, t2, "alg2:fallback")
            return t2
        # No decode-capable instance at all: only reachable in single-instance
        # runs, where the prefill instance serves both phases in place.
        self._log_dispatch("decode_dispatch", now, req.request_id, prefill_instance, "alg2:forced-local")
        return prefill_instance

    # -- elastic moves ---------------------------------------------------

    def try_move_decode_to_prefill(self, now: SimTime, trigger: str = "alg1") -> int | None:
        """Flip the least-loaded decode-role instance to prefill, preferring
        one that was already drifting that way.  Refuses to empty the decode
        side."""
        if not self.config.enable_flips:
            return None
        if self.pools.decode_capable() <= 1:
            return None
        candidates = self.pools.members(PoolKind.P_TO_D) or self.pools.members(PoolKind.DECODE)
        chosen, _ = self._argmin(candidates, lambda inst: inst.running_tokens())
        inst = self.instances[chosen]
        src = self.pools.pool_of(chosen)
        dst = self.pools.flip_to_prefill_role(
            chosen, has_prefill_work=inst.has_prefill_work(), has_decode_work=inst.has_decode_work()
        )
        if dst is None:
            return None
        self._log_flip(now, chosen, src, dst, trigger)
        return chosen

    def try_move_prefill_to_decode(self, now: SimTime, trigger: str = "alg2") -> int | None:
        """Flip the prefill-role instance with the least predicted backlog to
        decode.  Deliberately ignores prefill load: decode health wins when
        both phases are pressed.  Refuses to empty the prefill side."""
        if not self.config.enable_flips:
            return None
        if self.pools.prefill_capable() <= 1:
            return None
        candidates = self.pools.members(PoolKind.D_TO_P) or self.pools.members(PoolKind.PREFILL)
        chosen, _ = self._argmin(candidates, lambda inst: self._delay(inst, now))
        inst = self.instances[chosen]
        src = self.pools.pool_of(chosen)
        dst = self.pools.flip_to_decode_role(
            chosen, has_prefill_work=inst.has_prefill_work(), has_decode_work=inst.has_decode_work()
        )
        if dst is None:
            return None
        self._log_flip(now, chosen, src, dst, trigger)
        return chosen

    # -- periodic triggers -----------------------------------------------

    def monitor_tick(self, snapshot: MonitorSnapshot, now: SimTime) -> None:
        """Flip triggers evaluated once per monitor period.

        A sustained pool-wide TPOT breach moves one prefill instance to decode
        per tick; separately, idle prefill instances are handed over whenever
        aggregate decode load runs above theta_busy.
        """
        if self.config.strategy is not Strategy.SLO_AWARE or not self.config.enable_flips:
            return
        mean_interval = self._pool_mean_interval(now)
        if mean_interval is not None and mean_interval > self.tpot_threshold:
            self._breach_s += self.monitor_period
            if self._breach_s >= self.breach_duration:
                self.try_move_prefill_to_decode(now, trigger="monitor:tpot")
        else:
            self._breach_s = 0.0

        decode_ids = self.pools.members(PoolKind.DECODE) + self.pools.members(PoolKind.P_TO_D)
        if not decode_ids:
            return
        aggregate = sum(self.instances[i].running_tokens() for i in decode_ids)
        capacity = self.max_tokens * len(decode_ids)
        if aggregate / capacity <= self.config.theta_busy:
            return
        for instance_id in self.pools.members(PoolKind.PREFILL):
            if self.pools.prefill_capable() <= 1:
                break
            inst = self.instances[instance_id]
            if inst.has_prefill_work() or inst.busy_until is not None:
                continue
            src = self.pools.pool_of(instance_id)
            dst = self.pools.flip_to_decode_role(
                instance_id, has_prefill_work=False, has_decode_work=inst.has_decode_work()
            )
            if dst is not None:
                self._log_flip(now, instance_id, src, dst, "monitor:idle")
