"""Analytic cost model for prefill, decode, and KV transfer times.

Prefill compute grows quadratically with prompt length (attention dominates);
decode iterations are memory-bound and scale linearly with the number of
batched tokens.  The same functional families serve two roles: with "true"
parameters they drive simulated execution, and fitted from profiling samples
they act as the scheduler's latency predictor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class PrefillCostParams:
    """Quadratic prefill time model: a2 * L**2 + a1 * L + a0."""

    a2: float
    a1: float
    a0: float


@dataclass(frozen=True)
class DecodeCostParams:
    """Token-linear decode iteration model: b1 * batch_tokens + b0."""

    b1: float
    b0: float

    def __post_init__(self) -> None:
        if self.b1 <= 0:
            raise ValueError(f"b1 must be positive, got {self.b1}")
        if self.b0 < 0:
            raise ValueError(f"b0 must be >= 0, got {self.b0}")


@dataclass(frozen=True)
class TransferParams:
    """KV migration cost: base_latency + L * bytes_per_token / bandwidth."""

    bandwidth: float
    base_latency: float = 1e-4
    bytes_per_token: int = 131072

    def __post_init__(self) -> None:
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.base_latency < 0:
            raise ValueError(f"base_latency must be >= 0, got {self.base_latency}")
        if self.bytes_per_token <= 0:
            raise ValueError(f"bytes_per_token must be positive, got {self.bytes_per_token}")


@dataclass(frozen=True)
class ProfilingSample:
    """One measured (prompt length, prefill time) pair."""

    input_len: int
    measured_time: float

    def __post_init__(self) -> None:
        if self.input_len < 1:
            raise ValueError(f"input_len must be >= 1, got {self.input_len}")
        if self.measured_time <= 0:
            raise ValueError(f"measured_time must be positive, got {self.measured_time}")


def predict_prefill_time(params: PrefillCostParams, input_len: int) -> float:
    """Predicted time to prefill a prompt of `input_len` tokens."""
    if input_len < 1:
        raise ValueError(f"input_len must be >= 1, got {input_len}")
    L = float(input_len)
    return params.a2 * L * L + params.a1 * L + params.a0


def decode_iter_time(params: DecodeCostParams, batch_tokens: int) -> float:
    """Duration of one iteration processing `batch_tokens` tokens."""
    if batch_tokens < 1:
        raise ValueError(f"batch_tokens must be >= 1, got {batch_tokens}")
    return params.b1 * batch_tokens + params.b0


def transfer_time(params: TransferParams, prompt_len: int) -> float:
    """Time to migrate the KV cache of a `prompt_len`-token prompt."""
    if prompt_len < 1:
        raise ValueError(f"prompt_len must be >= 1, got {prompt_len}")
    return params.base_latency + prompt_len * params.bytes_per_token / params.bandwidth


def fit_quadratic(samples: Sequence[ProfilingSample]) -> PrefillCostParams:
    """Least-squares fit of the quadratic prefill model to profiling samples.

    Lengths are rescaled to [0, 1] before solving; the raw Vandermonde basis
    is badly conditioned once L**2 reaches 1e8 and would lose digits.
    """
    if len(samples) < 3:
        raise ValueError(f"need at least 3 samples to fit a quadratic, got {len(samples)}")
    lengths = np.array([s.input_len for s in samples], dtype=float)
    times = np.array([s.measured_time for s in samples], dtype=float)
    if len(np.unique(lengths)) < 3:
        raise ValueError("need at least 3 distinct input lengths to fit a quadratic")
    scale = lengths.max()
    x = lengths / scale
    basis = np.stack([x * x, x, np.ones_like(x)], axis=1)
    coef, _, rank, _ = np.linalg.lstsq(basis, times, rcond=None)
    if rank < 3:
        raise ValueError("profiling samples are rank-deficient, cannot fit a quadratic")
    # float() strips the numpy scalar type so the params repr as plain literals.
    return PrefillCostParams(
        a2=float(coef[0] / (scale * scale)), a1=float(coef[1] / scale), a0=float(coef[2])
    )


def fit_residual_rms(params: PrefillCostParams, samples: Sequence[ProfilingSample]) -> float:
    """Root-mean-square residual of a fit over its samples."""
    errs = [predict_prefill_time(params, s.input_len) - s.measured_time for s in samples]
    return math.sqrt(sum(e * e for e in errs) / len(errs))


def max_running_tokens(params: DecodeCostParams, kv_capacity_tokens: int, tpot_slo: float) -> int:
    """Largest decode batch (in tokens) that keeps iteration time within the TPOT SLO.

    Bounded by KV capacity as well: an instance cannot batch more context
    tokens than it can hold.
    """
    if kv_capacity_tokens < 1:
        raise ValueError(f"kv_capacity_tokens must be >= 1, got {kv_capacity_tokens}")
    if tpot_slo <= params.b0:
        raise ValueError(
            f"tpot_slo {tpot_slo} is unsatisfiable: decode floor cost b0 is {params.b0}"
        )
    # The 1e-9 nudge keeps exact-ratio configs from flooring one token low.
    batch_bound = math.floor((tpot_slo - params.b0) / params.b1 + 1e-9)
    return min(kv_capacity_tokens, batch_bound)


def default_profile_grid(max_context: int, points: int = 16) -> list[int]:
    """Geometric grid of prompt lengths from 64 up to `max_context`."""
    if max_context < 64:
        raise ValueError(f"max_context must be >= 64, got {max_context}")
    if points < 3:
        raise ValueError(f"points must be >= 3, got {points}")
    grid = np.geomspace(64, max_context, num=points)
    lengths = sorted({int(round(g)) for g in grid})
    return lengths


def profile_prefill(
    true_params: PrefillCostParams,
    grid: Iterable[int],
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> list[ProfilingSample]:
    """Sample the true prefill model over a length grid.

    `noise` is the relative standard deviation of multiplicative measurement
    noise; 0 reproduces the model exactly.
    """
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    if noise > 0 and rng is None:
        raise ValueError("an rng is required when noise > 0")
    samples = []
    for L in grid:
        t = predict_prefill_time(true_params, L)
        if noise > 0:
            t *= 1.0 + noise * rng.standard_normal()
        samples.append(ProfilingSample(input_len=L, measured_time=max(t, 1e-12)))
    return samples
