"""Discrete-event simulation loop tying instances, pools, and the scheduler
together, plus run configuration loading.

Events at equal timestamps apply in a fixed kind order (migration and
iteration completions settle state before new dispatches, monitor ticks
observe last), then by creation sequence, so a run is a pure function of
(trace, config): identical inputs give byte-identical records and logs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from .core import Phase, PhaseRequest, PoolKind, RequestRecord, SLOConfig, SimTime, TraceRequest
from .cost_model import (
    DecodeCostParams,
    PrefillCostParams,
    TransferParams,
    default_profile_grid,
    fit_quadratic,
    max_running_tokens,
    profile_prefill,
)
from .instance import Instance, InstanceConfig
from .monitor import Monitor, MonitorSnapshot
from .pools import PoolSet
from .scheduler import GlobalScheduler, SchedulerConfig, Strategy


class SimulationStallError(RuntimeError):
    """Raised when the event loop stops making progress."""


class EventKind(IntEnum):
    # Numeric order is the tie-break order at equal timestamps.
    MIGRATION_COMPLETE = 0
    ITERATION_COMPLETE = 1
    PREFILL_COMPLETE = 2
    ARRIVAL = 3
    MONITOR_TICK = 4


@dataclass(frozen=True)
class RunConfig:
    instance_count: int
    instance: InstanceConfig
    slo: SLOConfig
    scheduler: SchedulerConfig = SchedulerConfig()
    init_prefill: int | None = None  # default: half the cluster, rounded up
    init_decode: int | None = None
    monitor_period_s: float = 1.0
    interval_window_s: float = 5.0
    seed: int = 0
    profile_noise: float = 0.0
    profile_points: int = 16
    max_context: int = 16384
    audit: bool = False  # per-event KV consistency checks

    def __post_init__(self) -> None:
        if self.instance_count < 1:
            raise ValueError(f"instance_count must be >= 1, got {self.instance_count}")
        if self.monitor_period_s <= 0 or self.interval_window_s <= 0:
            raise ValueError("monitor_period_s and interval_window_s must be positive")
        n_p, n_d = self.initial_split()
        if n_p < 0 or n_d < 0 or n_p + n_d != self.instance_count:
            raise ValueError(
                f"initial split ({n_p}, {n_d}) does not partition {self.instance_count} instances"
            )
        if self.scheduler.strategy is not Strategy.SLO_AWARE and (n_p == 0 or n_d == 0):
            raise ValueError("static strategies need at least one instance in each pool")

    def initial_split(self) -> tuple[int, int]:
        if self.init_prefill is None and self.init_decode is None:
            n_p = (self.instance_count + 1) // 2
            return n_p, self.instance_count - n_p
        n_p = self.init_prefill if self.init_prefill is not None else self.instance_count - self.init_decode
        n_d = self.init_decode if self.init_decode is not None else self.instance_count - self.init_prefill
        return n_p, n_d


@dataclass
class RunResult:
    records: list[RequestRecord]
    snapshots: list[MonitorSnapshot]
    decisions: list[dict]
    transitions: list[tuple[int, PoolKind, PoolKind]] = field(default_factory=list)


def scale_trace(trace: list[TraceRequest], s: float) -> list[TraceRequest]:
    """Multiply every arrival timestamp by s; s < 1 raises the request rate."""
    if s <= 0:
        raise ValueError(f"scale factor must be positive, got {s}")
    return [replace(r, arrival=r.arrival * s) for r in trace]


def _validate_trace(trace: list[TraceRequest], config: RunConfig) -> None:
    last = -1.0
    seen: set[int] = set()
    for req in trace:
        if req.arrival < last:
            raise ValueError("trace must be sorted by arrival time")
        last = req.arrival
        if req.id in seen:
            raise ValueError(f"duplicate request id {req.id}")
        seen.add(req.id)
        if req.input_len + req.output_len > config.instance.kv_capacity_tokens:
            raise ValueError(
                f"request {req.id} needs {req.input_len + req.output_len} KV tokens, "
                f"capacity is {config.instance.kv_capacity_tokens}"
            )


# Abort if this many events pass without a token emitted or request finished.
STALL_EVENT_LIMIT = 500_000


class _Simulation:
    def __init__(self, trace: list[TraceRequest], config: RunConfig):
        self.trace = trace
        self.config = config
        self.requests = {r.id: r for r in trace}

        rng = np.random.default_rng(config.seed)
        grid = default_profile_grid(config.max_context, config.profile_points)
        samples = profile_prefill(config.instance.true_prefill, grid, config.profile_noise, rng)
        self.predictor = fit_quadratic(samples)
        self.max_tokens = max_running_tokens(
            config.instance.true_decode, config.instance.kv_capacity_tokens, config.slo.tpot_slo
        )

        self.instances = {
            i: Instance(i, config.instance, config.interval_window_s)
            for i in range(config.instance_count)
        }
        n_p, _ = config.initial_split()
        assignment = {
            i: (PoolKind.PREFILL if i < n_p else PoolKind.DECODE) for i in range(config.instance_count)
        }
        self.pools = PoolSet(assignment)
        self.scheduler = GlobalScheduler(
            self.pools,
            self.instances,
            self.predictor,
            config.slo,
            self.max_tokens,
            config.scheduler,
            config.monitor_period_s,
            config.interval_window_s,
        )
        self.monitor = Monitor(self.predictor, config.interval_window_s, config.monitor_period_s)

        self.heap: list[tuple[SimTime, int, int, object]] = []
        self.seq = 0
        self.token_times: dict[int, list[SimTime]] = {r.id: [] for r in trace}
        self.snapshots: list[MonitorSnapshot] = []
        self.completed = 0
        self._events_since_progress = 0

    def _push(self, time: SimTime, kind: EventKind, payload: object) -> None:
        heapq.heappush(self.heap, (time, int(kind), self.seq, payload))
        self.seq += 1

    # -- event handlers --------------------------------------------------

    def _kick(self, inst: Instance, now: SimTime) -> None:
        if inst.busy_until is not None or not inst.has_startable_work():
            return
        batch = inst.build_iteration_batch()
        if not batch:
            return
        finish = inst.begin_iteration(batch, now)
        self._push(finish, EventKind.ITERATION_COMPLETE, inst.id)

    def _start_migrations(self, inst: Instance, now: SimTime) -> None:
        for finish, req in inst.advance_migrations(now):
            self._push(finish, EventKind.MIGRATION_COMPLETE, (inst.id, req))

    def _check_drained(self, inst: Instance, now: SimTime) -> None:
        kind = self.pools.pool_of(inst.id)
        if kind is PoolKind.P_TO_D and not inst.has_prefill_work():
            dst = self.pools.on_drained(inst.id, Phase.PREFILL)
            if dst is not None:
                self.scheduler.note_drained(now, inst.id, kind, dst)
        elif kind is PoolKind.D_TO_P and not inst.has_decode_work():
            dst = self.pools.on_drained(inst.id, Phase.DECODE)
            if dst is not None:
                self.scheduler.note_drained(now, inst.id, kind, dst)

    def _complete_request(self, request_id: int) -> None:
        self.completed += 1
        self._events_since_progress = 0

    def _on_arrival(self, now: SimTime, req: TraceRequest) -> None:
        preq = PhaseRequest(req.id, Phase.PREFILL, prompt_len=req.input_len, output_len=req.output_len)
        target = self.scheduler.schedule_prefill(req, now)
        inst = self.instances[target]
        inst.enqueue(preq, now)
        self._kick(inst, now)

    def _on_iteration_complete(self, now: SimTime, instance_id: int) -> None:
        inst = self.instances[instance_id]
        out = inst.execute_iteration(now)
        if out.emitted or out.prefill_finished:
            self._events_since_progress = 0
        for rid in out.emitted:
            self.token_times[rid].append(now)
        for rid in out.prefill_finished:
            self.token_times[rid].append(now)
            if self.requests[rid].output_len == 1:
                inst.release_parked(rid)
                self._complete_request(rid)
            else:
                self._push(now, EventKind.PREFILL_COMPLETE, (rid, instance_id))
        for req in out.decode_finished:
            self._complete_request(req.request_id)
        self._check_drained(inst, now)
        self._start_migrations(inst, now)
        self._kick(inst, now)

    def _on_prefill_complete(self, now: SimTime, request_id: int, source_id: int) -> None:
        req = self.requests[request_id]
        dreq = PhaseRequest(request_id, Phase.DECODE, prompt_len=req.input_len, output_len=req.output_len)
        target = self.scheduler.schedule_decode(dreq, source_id, now)
        inst = self.instances[target]
        if target == source_id:
            inst.adopt_local_decode(dreq, now)
        else:
            dreq.kv_source = source_id
            inst.enqueue(dreq, now)
            self._start_migrations(inst, now)
        self._kick(inst, now)

    def _on_migration_complete(self, now: SimTime, instance_id: int, req: PhaseRequest) -> None:
        inst = self.instances[instance_id]
        inst.finish_migration(req, now)
        source = self.instances[req.kv_source]
        source.release_parked(req.request_id)
        self._start_migrations(inst, now)
        # Releasing the parked prompt may unblock transfers gated on the
        # source's memory, and nothing else retries them if it sits idle.
        self._start_migrations(source, now)
        self._kick(inst, now)
        self._kick(source, now)

    def _on_monitor_tick(self, now: SimTime) -> None:
        snapshot = self.monitor.collect(self.instances, self.pools, now)
        self.snapshots.append(snapshot)
        self.scheduler.monitor_tick(snapshot, now)
        if self.completed < len(self.trace):
            self._push(now + self.config.monitor_period_s, EventKind.MONITOR_TICK, None)

    # -- main loop -------------------------------------------------------

    def run(self) -> RunResult:
        _validate_trace(self.trace, self.config)
        for req in self.trace:
            self._push(req.arrival, EventKind.ARRIVAL, req)
        if self.trace:
            self._push(self.config.monitor_period_s, EventKind.MONITOR_TICK, None)

        while self.heap:
            now, kind, _, payload = heapq.heappop(self.heap)
            self._events_since_progress += 1
            if kind == EventKind.MIGRATION_COMPLETE:
                self._on_migration_complete(now, payload[0], payload[1])
            elif kind == EventKind.ITERATION_COMPLETE:
                self._on_iteration_complete(now, payload)
            elif kind == EventKind.PREFILL_COMPLETE:
                self._on_prefill_complete(now, payload[0], payload[1])
            elif kind == EventKind.ARRIVAL:
                self._on_arrival(now, payload)
            else:
                self._on_monitor_tick(now)
            if self.config.audit:
                for inst in self.instances.values():
                    inst.audit()
                self.pools.check_partition()
            if self._events_since_progress > STALL_EVENT_LIMIT:
                raise SimulationStallError(self._stall_diagnostic(now))

        if self.completed != len(self.trace):
            raise SimulationStallError(self._stall_diagnostic(None))
        for inst in self.instances.values():
            if not inst.idle_and_empty():
                raise AssertionError(f"instance {inst.id} not drained at end of run")

        records = [
            RequestRecord.from_token_times(
                req.id, req.arrival, self.token_times[req.id], self.config.slo
            )
            for req in self.trace
        ]
        return RunResult(
            records=records,
            snapshots=self.snapshots,
            decisions=self.scheduler.decisions,
            transitions=list(self.pools.transitions),
        )

    def _stall_diagnostic(self, now: SimTime | None) -> str:
        lines = [
            f"simulation stalled at t={now}: {self.completed}/{len(self.trace)} requests complete"
        ]
        for inst in self.instances.values():
            lines.append(
                f"  instance {inst.id}: pool={self.pools.pool_of(inst.id).value} "
                f"kv={inst.kv_used}/{inst.config.kv_capacity_tokens} "
                f"running={len(inst.running)} waiting={len(inst.wait_queue)} "
                f"migrating={len(inst.migration_queue)} busy_until={inst.busy_until}"
            )
        return "\n".join(lines)


def run(trace: list[TraceRequest], config: RunConfig) -> RunResult:
    """Simulate a trace under a configuration; deterministic for fixed inputs."""
    return _Simulation(trace, config).run()


# -- configuration files -------------------------------------------------

# key -> (parser, target). Flat key/value text: one `key = value` per line,
# `#` comments allowed.
_CONFIG_KEYS = {
    "instances": int,
    "kv_capacity_tokens": int,
    "chunk_budget": int,
    "max_batch_requests": int,
    "a2": float,
    "a1": float,
    "a0": float,
    "b1": float,
    "b0": float,
    "bytes_per_token": int,
    "bandwidth": float,
    "base_latency": float,
    "ttft_slo": float,
    "tpot_slo": float,
    "attainment_target": float,
    "strategy": str,
    "ttft_threshold": float,
    "tpot_threshold": float,
    "theta_d": float,
    "theta_busy": float,
    "tpot_breach_duration_s": float,
    "enable_flips": lambda v: v.lower() in ("1", "true", "yes"),
    "monitor_period_s": float,
    "interval_window_s": float,
    "seed": int,
    "init_prefill": int,
    "init_decode": int,
    "profile_noise": float,
    "profile_points": int,
    "max_context": int,
}

_DEFAULTS = {
    "instances": 8,
    "kv_capacity_tokens": 16000,
    "chunk_budget": 512,
    "max_batch_requests": 256,
    "a2": 1e-7,
    "a1": 1e-4,
    "a0": 5e-3,
    "b1": 2e-5,
    "b0": 5e-3,
    "bytes_per_token": 131072,
    "bandwidth": 4e11,
    "base_latency": 1e-4,
    "ttft_slo": 3.0,
    "tpot_slo": 0.1,
    "attainment_target": 0.9,
    "strategy": "slo-aware",
    "theta_d": 0.5,
    "theta_busy": 0.75,
    "enable_flips": True,
    "monitor_period_s": 1.0,
    "interval_window_s": 5.0,
    "seed": 0,
    "profile_noise": 0.0,
    "profile_points": 16,
    "max_context": 16384,
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = dict(_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected `key = value`, got {raw!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from exc
    return values


def config_from_values(values: dict) -> RunConfig:
    strategy = Strategy(values["strategy"])
    scheduler = SchedulerConfig(
        strategy=strategy,
        ttft_threshold=values.get("ttft_threshold"),
        tpot_threshold=values.get("tpot_threshold"),
        theta_d=values["theta_d"],
        theta_busy=values["theta_busy"],
        tpot_breach_duration_s=values.get("tpot_breach_duration_s"),
        enable_flips=values["enable_flips"],
    )
    instance = InstanceConfig(
        kv_capacity_tokens=values["kv_capacity_tokens"],
        true_prefill=PrefillCostParams(values["a2"], values["a1"], values["a0"]),
        true_decode=DecodeCostParams(values["b1"], values["b0"]),
        transfer=TransferParams(
            bandwidth=values["bandwidth"],
            base_latency=values["base_latency"],
            bytes_per_token=values["bytes_per_token"],
        ),
        chunk_budget=values["chunk_budget"],
        max_batch_requests=values["max_batch_requests"],
    )
    slo = SLOConfig(
        ttft_slo=values["ttft_slo"],
        tpot_slo=values["tpot_slo"],
        attainment_target=values["attainment_target"],
    )
    return RunConfig(
        instance_count=values["instances"],
        instance=instance,
        slo=slo,
        scheduler=scheduler,
        init_prefill=values.get("init_prefill"),
        init_decode=values.get("init_decode"),
        monitor_period_s=values["monitor_period_s"],
        interval_window_s=values["interval_window_s"],
        seed=values["seed"],
        profile_noise=values["profile_noise"],
        profile_points=values["profile_points"],
        max_context=values["max_context"],
    )


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return config_from_values(parse_config_text(path.read_text(), source=str(path)))


def default_run_config() -> RunConfig:
    return config_from_values(dict(_DEFAULTS))
