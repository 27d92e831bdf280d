"""Elastic role pools and the instance flip state machine.

Every instance is in exactly one of four pools.  Flips move an instance
toward the opposite role; when the instance still holds work of its old type
it passes through a transition pool (P_TO_D or D_TO_P) and is promoted by
`on_drained` once that work finishes.  A flip can also be reversed while the
instance is still draining, which routes it straight back to its old pool so
that no instance ever leaves the four-pool partition.
"""

from __future__ import annotations

import logging

from .core import Phase, PoolKind

logger = logging.getLogger(__name__)

# The only membership changes the state machine may produce.
LEGAL_EDGES = frozenset(
    {
        (PoolKind.PREFILL, PoolKind.P_TO_D),
        (PoolKind.PREFILL, PoolKind.DECODE),
        (PoolKind.P_TO_D, PoolKind.DECODE),
        (PoolKind.P_TO_D, PoolKind.PREFILL),
        (PoolKind.DECODE, PoolKind.D_TO_P),
        (PoolKind.DECODE, PoolKind.PREFILL),
        (PoolKind.D_TO_P, PoolKind.PREFILL),
        (PoolKind.D_TO_P, PoolKind.DECODE),
    }
)


class PoolSet:
    """Partition of instance ids over the four role pools.

    Pool membership is ordered (insertion order) so that argmin scans and
    round-robin cursors are deterministic.  Every transition is appended to
    `transitions` as (instance_id, from_pool, to_pool).
    """

    def __init__(self, assignment: dict[int, PoolKind]):
        self._pools: dict[PoolKind, dict[int, None]] = {kind: {} for kind in PoolKind}
        self._where: dict[int, PoolKind] = {}
        self.transitions: list[tuple[int, PoolKind, PoolKind]] = []
        for instance_id, kind in assignment.items():
            if instance_id in self._where:
                raise ValueError(f"instance {instance_id} assigned twice")
            self._pools[kind][instance_id] = None
            self._where[instance_id] = kind

    # -- queries ---------------------------------------------------------

    def members(self, kind: PoolKind) -> tuple[int, ...]:
        return tuple(self._pools[kind])

    def pool_of(self, instance_id: int) -> PoolKind:
        return self._where[instance_id]

    def counts(self) -> dict[PoolKind, int]:
        return {kind: len(ids) for kind, ids in self._pools.items()}

    def decode_capable(self) -> int:
        """Instances currently able to serve decode work."""
        return len(self._pools[PoolKind.DECODE]) + len(self._pools[PoolKind.P_TO_D])

    def prefill_capable(self) -> int:
        """Instances currently able to serve prefill work."""
        return len(self._pools[PoolKind.PREFILL]) + len(self._pools[PoolKind.D_TO_P])

    def all_ids(self) -> tuple[int, ...]:
        return tuple(self._where)

    # -- transitions -----------------------------------------------------

    def _move(self, instance_id: int, to: PoolKind) -> PoolKind:
        src = self._where[instance_id]
        edge = (src, to)
        if edge not in LEGAL_EDGES:
            raise RuntimeError(f"illegal pool transition {src.value} -> {to.value}")
        del self._pools[src][instance_id]
        self._pools[to][instance_id] = None
        self._where[instance_id] = to
        self.transitions.append((instance_id, src, to))
        return to

    def flip_to_decode_role(
        self, instance_id: int, *, has_prefill_work: bool, has_decode_work: bool
    ) -> PoolKind | None:
        """Reassign an instance toward decode.  Returns the new pool, or None
        if the instance already has the decode role (no-op, warned)."""
        src = self._where[instance_id]
        if src in (PoolKind.DECODE, PoolKind.P_TO_D):
            logger.warning("instance %d already decode-role (%s), flip ignored", instance_id, src.value)
            return None
        if src is PoolKind.PREFILL:
            return self._move(instance_id, PoolKind.P_TO_D if has_prefill_work else PoolKind.DECODE)
        # Reversal of a decode->prefill flip still in its transition pool.
        # Residual prefill work, if any, drains inside the Decode pool; the
        # transition pool for it would need an edge the state machine does
        # not allow.
        return self._move(instance_id, PoolKind.DECODE)

    def flip_to_prefill_role(
        self, instance_id: int, *, has_prefill_work: bool, has_decode_work: bool
    ) -> PoolKind | None:
        """Reassign an instance toward prefill; mirror of flip_to_decode_role."""
        src = self._where[instance_id]
        if src in (PoolKind.PREFILL, PoolKind.D_TO_P):
            logger.warning("instance %d already prefill-role (%s), flip ignored", instance_id, src.value)
            return None
        if src is PoolKind.DECODE:
            return self._move(instance_id, PoolKind.D_TO_P if has_decode_work else PoolKind.PREFILL)
        return self._move(instance_id, PoolKind.PREFILL)

    def on_drained(self, instance_id: int, drained_phase: Phase) -> PoolKind | None:
        """Promote a transition-pool instance whose old-role work ran dry."""
        src = self._where[instance_id]
        if src is PoolKind.P_TO_D and drained_phase is Phase.PREFILL:
            return self._move(instance_id, PoolKind.DECODE)
        if src is PoolKind.D_TO_P and drained_phase is Phase.DECODE:
            return self._move(instance_id, PoolKind.PREFILL)
        return None

    # -- invariants ------------------------------------------------------

    def check_partition(self) -> None:
        seen: set[int] = set()
        for kind, ids in self._pools.items():
            for instance_id in ids:
                if instance_id in seen:
                    raise AssertionError(f"instance {instance_id} in more than one pool")
                if self._where[instance_id] is not kind:
                    raise AssertionError(f"instance {instance_id} index out of sync")
                seen.add(instance_id)
        if seen != set(self._where):
            raise AssertionError("pool membership does not cover all instances")
