"""Discrete-event simulator for prefill-decode disaggregated serving clusters.

The library models a cluster of stateless serving instances split into
elastic role pools, an SLO-aware global scheduler that dispatches requests
and flips instances between roles under load, and the measurement pipeline
(monitor series, latency records, rate sweeps) used to compare scheduling
strategies on a workload trace.
"""

from .core import (
    Phase,
    PhaseRequest,
    PoolKind,
    RequestRecord,
    SLOConfig,
    SimTime,
    TraceRequest,
    compute_tpot,
    compute_ttft,
)
from .cost_model import (
    DecodeCostParams,
    PrefillCostParams,
    ProfilingSample,
    TransferParams,
    decode_iter_time,
    default_profile_grid,
    fit_quadratic,
    max_running_tokens,
    predict_prefill_time,
    profile_prefill,
    transfer_time,
)
from .engine import (
    RunConfig,
    RunResult,
    SimulationStallError,
    config_from_values,
    default_run_config,
    load_run_config,
    parse_config_text,
    run,
    scale_trace,
)
from .instance import Instance, InstanceConfig
from .monitor import InstanceStats, Monitor, MonitorSnapshot
from .pools import LEGAL_EDGES, PoolSet
from .report import (
    RunSummary,
    compute_metrics,
    max_qualifying_rate,
    percentile_nearest_rank,
    run_rate_sweep,
    sweep_max_rate,
    write_outputs,
)
from .scheduler import GlobalScheduler, SchedulerConfig, Strategy
from .traces import (
    BurstEpisode,
    SyntheticParams,
    TraceStats,
    bundled_bursty_trace,
    bundled_ramp_trace,
    gen_synthetic,
    load_trace,
    native_rate,
    save_trace,
    trace_stats,
)

__all__ = [
    "BurstEpisode",
    "DecodeCostParams",
    "GlobalScheduler",
    "Instance",
    "InstanceConfig",
    "InstanceStats",
    "LEGAL_EDGES",
    "Monitor",
    "MonitorSnapshot",
    "Phase",
    "PhaseRequest",
    "PoolKind",
    "PoolSet",
    "PrefillCostParams",
    "ProfilingSample",
    "RequestRecord",
    "RunConfig",
    "RunResult",
    "RunSummary",
    "SLOConfig",
    "SchedulerConfig",
    "SimTime",
    "SimulationStallError",
    "Strategy",
    "SyntheticParams",
    "TraceRequest",
    "TraceStats",
    "TransferParams",
    "bundled_bursty_trace",
    "bundled_ramp_trace",
    "compute_metrics",
    "compute_tpot",
    "compute_ttft",
    "config_from_values",
    "decode_iter_time",
    "default_profile_grid",
    "default_run_config",
    "fit_quadratic",
    "gen_synthetic",
    "load_run_config",
    "load_trace",
    "max_running_tokens",
    "native_rate",
    "parse_config_text",
    "percentile_nearest_rank",
    "predict_prefill_time",
    "profile_prefill",
    "run",
    "run_rate_sweep",
    "save_trace",
    "scale_trace",
    "max_qualifying_rate",
    "sweep_max_rate",
    "trace_stats",
    "transfer_time",
    "write_outputs",
]
