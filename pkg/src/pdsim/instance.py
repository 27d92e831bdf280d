"""Single serving instance: queues, batch formation, KV memory, migrations.

An instance runs one iteration at a time.  Each iteration batch gives every
admitted decode request one token and fills the remaining chunk budget with
prefill tokens, so decode progress is never starved by prefill work.  A
dedicated iteration (exactly one untouched prompt, no decode residents) is
costed with the quadratic prefill model; every other iteration is costed
token-linearly on its total batch size.

KV accounting is strict: admission charges are taken up front, each decode
token adds one, and releases happen at completion, so `kv_used` always equals
the sum of per-request holdings and never exceeds capacity.  To keep that
true while admitted decodes grow, admission reserves their remaining output
tokens as committed headroom.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .core import Phase, PhaseRequest, SimTime
from .cost_model import (
    DecodeCostParams,
    PrefillCostParams,
    TransferParams,
    decode_iter_time,
    predict_prefill_time,
    transfer_time,
)


@dataclass(frozen=True)
class InstanceConfig:
    kv_capacity_tokens: int
    true_prefill: PrefillCostParams
    true_decode: DecodeCostParams
    transfer: TransferParams
    chunk_budget: int = 512
    max_batch_requests: int = 256

    def __post_init__(self) -> None:
        if self.chunk_budget < 1:
            raise ValueError(f"chunk_budget must be >= 1, got {self.chunk_budget}")
        if self.max_batch_requests < 1:
            raise ValueError(f"max_batch_requests must be >= 1, got {self.max_batch_requests}")
        if self.kv_capacity_tokens < self.chunk_budget:
            raise ValueError(
                f"kv_capacity_tokens {self.kv_capacity_tokens} smaller than "
                f"chunk_budget {self.chunk_budget}"
            )


@dataclass
class BatchEntry:
    """One request's share of an iteration batch."""

    req: PhaseRequest
    tokens: int
    dedicated: bool = False
    completes_prefill: bool = False
    admit: bool = False  # request enters `running` from wait_queue at begin


@dataclass
class IterationOutcome:
    """Effects of a finished iteration, applied at its completion time."""

    time: SimTime
    emitted: list[int] = field(default_factory=list)  # decode token per request id
    prefill_finished: list[int] = field(default_factory=list)  # first token emitted
    decode_finished: list[PhaseRequest] = field(default_factory=list)


class Instance:
    """State and local scheduling of one serving instance."""

    def __init__(self, instance_id: int, config: InstanceConfig, interval_window: float = 5.0):
        self.id = instance_id
        self.config = config
        self.wait_queue: deque[PhaseRequest] = deque()
        self.migration_queue: deque[PhaseRequest] = deque()
        self.running: list[PhaseRequest] = []  # admission order
        self.parked_kv: dict[int, int] = {}  # finished prefills awaiting decode disposition
        self.kv_used = 0
        self.kv_reserved = 0  # in-flight migration, counted by gates, not yet resident
        self.busy_until: SimTime | None = None
        self._pending: list[BatchEntry] | None = None
        self._active_migration: PhaseRequest | None = None
        self._resident_ids: set[int] = set()
        self._interval_window = interval_window
        self._emissions: deque[tuple[SimTime, int]] = deque()

    # -- admission and queues -------------------------------------------

    def enqueue(self, req: PhaseRequest, now: SimTime) -> None:
        """Accept a dispatched phase request.

        Decode requests whose KV lives elsewhere (kv_source set) join the
        migration queue; everything else waits for the next iteration.
        """
        if req.request_id in self._resident_ids:
            raise ValueError(f"request {req.request_id} already resident on instance {self.id}")
        if req.kv_source == self.id:
            raise ValueError("kv_source must be unset for a local decode")
        self._resident_ids.add(req.request_id)
        if req.phase is Phase.DECODE and req.kv_source is not None:
            self.migration_queue.append(req)
        else:
            self.wait_queue.append(req)

    def adopt_local_decode(self, req: PhaseRequest, now: SimTime) -> None:
        """Start the decode phase in place: the prompt KV parked here after
        prefill is handed to the decode request without any transfer."""
        tokens = self.parked_kv.pop(req.request_id)
        req.kv_held = tokens
        req.kv_source = None
        self.enqueue(req, now)

    def release_parked(self, request_id: int) -> None:
        """Drop a parked prompt copy (migration pulled it, or output_len was 1)."""
        self.kv_used -= self.parked_kv.pop(request_id)

    # -- migrations ------------------------------------------------------

    def advance_migrations(self, now: SimTime) -> list[tuple[SimTime, PhaseRequest]]:
        """Start the next queued migration if the channel and memory allow.

        Transfers are serialized per instance, so completion order always
        matches enqueue order.  A transfer starts only once the prompt plus
        the request's whole remaining output fits alongside the growth still
        owed to decodes that landed earlier; admitting on prompt size alone
        can strand a full instance with residents that may never start.
        Returns [(finish_time, request)] for a newly started transfer, else [].
        """
        if self._active_migration is not None or not self.migration_queue:
            return []
        req = self.migration_queue[0]
        need = req.prompt_len + (req.output_len - 1 - req.tokens_generated)
        if self._kv_free() - self._waiting_decode_growth() < need:
            return []
        self.migration_queue.popleft()
        self.kv_reserved += req.prompt_len
        self._active_migration = req
        finish = now + transfer_time(self.config.transfer, req.prompt_len)
        return [(finish, req)]

    def finish_migration(self, req: PhaseRequest, now: SimTime) -> None:
        if self._active_migration is not req:
            raise RuntimeError(f"instance {self.id}: unexpected migration completion")
        self._active_migration = None
        self.kv_reserved -= req.prompt_len
        self.kv_used += req.prompt_len
        req.kv_held = req.prompt_len
        self.wait_queue.append(req)

    # -- batch formation -------------------------------------------------

    def _committed_growth(self) -> int:
        """KV tokens the running decode requests are still entitled to grow by."""
        return sum(
            r.output_len - 1 - r.tokens_generated for r in self.running if r.phase is Phase.DECODE
        )

    def _waiting_decode_growth(self) -> int:
        """Growth still owed to resident decodes that have not started; they
        claim memory before any newly migrated request may."""
        return sum(
            r.output_len - 1 - r.tokens_generated for r in self.wait_queue if r.phase is Phase.DECODE
        )

    def _kv_free(self) -> int:
        return self.config.kv_capacity_tokens - self.kv_used - self.kv_reserved - self._committed_growth()

    def build_iteration_batch(self) -> list[BatchEntry]:
        """Plan the next iteration batch; pure, applied by begin_iteration.

        Decode requests come first: all running ones, then waiting ones in
        FCFS order while the request cap and committed-growth headroom allow.
        Prefill fills the leftover chunk budget FCFS, gated by free memory.
        """
        budget = self.config.chunk_budget
        decode_cap = min(self.config.max_batch_requests, budget)
        kv_free = self._kv_free()
        entries: list[BatchEntry] = []

        n_decode = 0
        for req in self.running:
            if req.phase is Phase.DECODE and n_decode < decode_cap:
                entries.append(BatchEntry(req, 1))
                n_decode += 1
        for req in self.wait_queue:
            if req.phase is not Phase.DECODE:
                continue
            if n_decode >= decode_cap:
                break
            growth = req.output_len - 1 - req.tokens_generated
            if growth > kv_free:
                break  # strict FCFS: later decodes wait behind a blocked head
            entries.append(BatchEntry(req, 1, admit=True))
            kv_free -= growth
            n_decode += 1

        running_prefill = [r for r in self.running if r.phase is Phase.PREFILL]
        waiting_prefill = [r for r in self.wait_queue if r.phase is Phase.PREFILL]

        if not entries and not running_prefill and waiting_prefill:
            head = waiting_prefill[0]
            if head.prefill_done == 0 and head.prompt_len <= budget and head.prompt_len <= kv_free:
                return [
                    BatchEntry(head, head.prompt_len, dedicated=True, completes_prefill=True, admit=True)
                ]

        budget_left = budget - n_decode
        for req, admit in [(r, False) for r in running_prefill] + [(r, True) for r in waiting_prefill]:
            if budget_left <= 0:
                break
            remaining = req.prompt_len - req.prefill_done
            chunk = min(budget_left, remaining, kv_free)
            if chunk <= 0:
                break  # memory blocked; strict FCFS for prefill as well
            entries.append(
                BatchEntry(req, chunk, admit=admit, completes_prefill=chunk == remaining)
            )
            budget_left -= chunk
            kv_free -= chunk
        return entries

    def begin_iteration(self, batch: list[BatchEntry], now: SimTime) -> SimTime:
        """Commit a planned batch: admissions, KV charges, and the finish time."""
        if self.busy_until is not None:
            raise RuntimeError(f"instance {self.id} already mid-iteration")
        if not batch:
            raise ValueError("empty batch")
        total_tokens = 0
        for entry in batch:
            total_tokens += entry.tokens
            if entry.admit:
                self.wait_queue.remove(entry.req)
                self.running.append(entry.req)
            if entry.req.phase is Phase.PREFILL:
                self.kv_used += entry.tokens
                entry.req.kv_held += entry.tokens
        if self.kv_used + self.kv_reserved > self.config.kv_capacity_tokens:
            raise RuntimeError(f"instance {self.id} overcommitted KV memory")
        if batch[0].dedicated:
            duration = predict_prefill_time(self.config.true_prefill, batch[0].req.prompt_len)
        else:
            duration = decode_iter_time(self.config.true_decode, total_tokens)
        self.busy_until = now + duration
        self._pending = batch
        return self.busy_until

    def execute_iteration(self, now: SimTime) -> IterationOutcome:
        """Apply the pending batch's effects at its completion time."""
        if self._pending is None or self.busy_until is None or now != self.busy_until:
            raise RuntimeError(f"instance {self.id}: no iteration completing at {now}")
        out = IterationOutcome(time=now)
        for entry in self._pending:
            req = entry.req
            if req.phase is Phase.DECODE:
                req.tokens_generated += 1
                req.kv_held += 1
                self.kv_used += 1
                out.emitted.append(req.request_id)
                if req.tokens_generated == req.output_len - 1:
                    self.kv_used -= req.kv_held
                    self.running.remove(req)
                    self._resident_ids.discard(req.request_id)
                    out.decode_finished.append(req)
            else:
                req.prefill_done += entry.tokens
                if entry.completes_prefill:
                    if req.prefill_done != req.prompt_len:
                        raise RuntimeError(f"request {req.request_id}: inconsistent chunk accounting")
                    self.running.remove(req)
                    self._resident_ids.discard(req.request_id)
                    self.parked_kv[req.request_id] = req.kv_held
                    out.prefill_finished.append(req.request_id)
        self._pending = None
        self.busy_until = None
        n_tokens = len(out.emitted) + len(out.prefill_finished)
        if n_tokens:
            self._emissions.append((now, n_tokens))
            horizon = now - 2 * self._interval_window
            while self._emissions and self._emissions[0][0] < horizon:
                self._emissions.popleft()
        return out

    # -- load and health metrics ----------------------------------------

    def running_tokens(self) -> int:
        """Total context tokens of resident decode requests (the decode load
        metric): prompt plus generated tokens, over running and waiting."""
        total = 0
        for req in self.running:
            if req.phase is Phase.DECODE:
                total += req.prompt_len + req.tokens_generated
        for req in self.wait_queue:
            if req.phase is Phase.DECODE:
                total += req.prompt_len + req.tokens_generated
        return total

    def predicted_prefill_delay(self, predictor: PrefillCostParams, now: SimTime) -> float:
        """Predicted wait before a newly assigned prompt could start prefill.

        Sums the predictor over every resident prefill request's remaining
        tokens, plus the remainder of the iteration in flight.  The in-flight
        term can double-count a chunk already inside the current batch; the
        estimate is intentionally cheap rather than exact.
        """
        delay = 0.0
        if self.busy_until is not None:
            delay += max(self.busy_until - now, 0.0)
        for req in self.running:
            if req.phase is Phase.PREFILL:
                delay += predict_prefill_time(predictor, req.prompt_len - req.prefill_done)
        for req in self.wait_queue:
            if req.phase is Phase.PREFILL:
                delay += predict_prefill_time(predictor, req.prompt_len - req.prefill_done)
        return delay

    def avg_token_interval(self, window: float, now: SimTime) -> float | None:
        """Mean gap between token-emitting iterations within the window, or
        None with fewer than two emissions to compare."""
        times = [t for t, _ in self._emissions if t >= now - window]
        if len(times) < 2:
            return None
        return (times[-1] - times[0]) / (len(times) - 1)

    # -- work queries ----------------------------------------------------

    def has_prefill_work(self) -> bool:
        return any(r.phase is Phase.PREFILL for r in self.running) or any(
            r.phase is Phase.PREFILL for r in self.wait_queue
        )

    def has_decode_work(self) -> bool:
        if self._active_migration is not None or self.migration_queue:
            return True
        return any(r.phase is Phase.DECODE for r in self.running) or any(
            r.phase is Phase.DECODE for r in self.wait_queue
        )

    def has_startable_work(self) -> bool:
        return bool(self.running or self.wait_queue)

    def prefill_queue_len(self) -> int:
        return sum(1 for r in self.wait_queue if r.phase is Phase.PREFILL)

    def prefill_count(self) -> int:
        return sum(1 for r in self.running if r.phase is Phase.PREFILL) + self.prefill_queue_len()

    def decode_count(self) -> int:
        n = sum(1 for r in self.running if r.phase is Phase.DECODE)
        n += sum(1 for r in self.wait_queue if r.phase is Phase.DECODE)
        n += len(self.migration_queue)
        if self._active_migration is not None:
            n += 1
        return n

    # -- consistency -----------------------------------------------------

    def audit(self) -> None:
        """Cross-check KV bookkeeping; cheap enough to run per event in tests."""
        held = sum(r.kv_held for r in self.running) + sum(r.kv_held for r in self.wait_queue)
        held += sum(self.parked_kv.values())
        if held != self.kv_used:
            raise AssertionError(
                f"instance {self.id}: kv_used {self.kv_used} != sum of holdings {held}"
            )
        if self.kv_used + self.kv_reserved > self.config.kv_capacity_tokens:
            raise AssertionError(f"instance {self.id}: KV over capacity")
        if self.kv_used < 0 or self.kv_reserved < 0:
            raise AssertionError(f"instance {self.id}: negative KV accounting")
        for req in self.running:
            if req.phase is Phase.DECODE and req.kv_held != req.prompt_len + req.tokens_generated:
                raise AssertionError(f"request {req.request_id}: decode KV out of sync")

    def idle_and_empty(self) -> bool:
        return (
            self.busy_until is None
            and not self.running
            and not self.wait_queue
            and not self.migration_queue
            and self._active_migration is None
            and not self.parked_kv
            and self.kv_used == 0
            and self.kv_reserved == 0
        )
