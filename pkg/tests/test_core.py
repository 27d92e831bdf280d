import math

import numpy as np
import pytest

from pdsim.core import (
    Phase,
    PhaseRequest,
    RequestRecord,
    SLOConfig,
    TraceRequest,
    compute_tpot,
    compute_ttft,
)

SLO = SLOConfig(ttft_slo=3.0, tpot_slo=0.1)


def record_for(arrival, token_times, slo=SLO):
    return RequestRecord.from_token_times(0, arrival, list(token_times), slo)


def fcfs_first_tokens(arrivals, prefill_times):
    """Serve requests one at a time in arrival order on a single server.

    Each request starts when the server frees up (or on arrival if idle) and
    its first token appears after its own prefill time.  This is the reference
    behaviour the queueing recurrence is supposed to reproduce.
    """
    free_at = 0.0
    firsts = []
    for a, p in zip(arrivals, prefill_times):
        start = max(free_at, a)
        done = start + p
        firsts.append(done)
        free_at = done
    return firsts


def recurrence_ttfts(arrivals, prefill_times):
    # TTFT_i = max(e_{i-1} - a_i, 0) + p_i with e_i = a_i + TTFT_i.
    ttfts = []
    e_prev = None
    for a, p in zip(arrivals, prefill_times):
        wait = 0.0 if e_prev is None else max(e_prev - a, 0.0)
        ttft = wait + p
        ttfts.append(ttft)
        e_prev = a + ttft
    return ttfts


def test_trace_request_validation():
    TraceRequest(id=0, arrival=0.0, input_len=1, output_len=1)
    with pytest.raises(ValueError):
        TraceRequest(id=0, arrival=-1.0, input_len=10, output_len=10)
    with pytest.raises(ValueError):
        TraceRequest(id=0, arrival=math.nan, input_len=10, output_len=10)
    with pytest.raises(ValueError):
        TraceRequest(id=0, arrival=0.0, input_len=0, output_len=10)
    with pytest.raises(ValueError):
        TraceRequest(id=0, arrival=0.0, input_len=10, output_len=0)


def test_slo_config_validation():
    with pytest.raises(ValueError):
        SLOConfig(ttft_slo=0.0, tpot_slo=0.1)
    with pytest.raises(ValueError):
        SLOConfig(ttft_slo=1.0, tpot_slo=-0.1)
    with pytest.raises(ValueError):
        SLOConfig(ttft_slo=1.0, tpot_slo=0.1, attainment_target=0.0)
    with pytest.raises(ValueError):
        SLOConfig(ttft_slo=1.0, tpot_slo=0.1, attainment_target=1.5)
    assert SLOConfig(ttft_slo=1.0, tpot_slo=0.1, attainment_target=1.0).attainment_target == 1.0


def test_ttft_simple():
    rec = record_for(arrival=2.0, token_times=[2.5, 2.6])
    assert rec.ttft == pytest.approx(0.5)


def test_ttft_requires_tokens():
    rec = record_for(0.0, [1.0])
    rec.token_times = []
    with pytest.raises(ValueError):
        compute_ttft(rec)


def test_ttft_rejects_token_before_arrival():
    rec = record_for(0.0, [1.0])
    rec.arrival = 2.0
    with pytest.raises(ValueError):
        compute_ttft(rec)


def test_queueing_recurrence_two_back_to_back():
    """Two requests arriving together: the second waits out the first."""
    arrivals = [0.0, 0.0]
    prefills = [1.0, 1.0]
    expected = [f - a for f, a in zip(fcfs_first_tokens(arrivals, prefills), arrivals)]
    assert expected == [1.0, 2.0]
    assert recurrence_ttfts(arrivals, prefills) == pytest.approx(expected)


def test_queueing_recurrence_matches_fcfs_service():
    rng = np.random.default_rng(42)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        arrivals = np.sort(rng.uniform(0.0, 20.0, size=n)).tolist()
        prefills = rng.uniform(0.01, 2.0, size=n).tolist()
        via_fcfs = [
            f - a for f, a in zip(fcfs_first_tokens(arrivals, prefills), arrivals)
        ]
        via_rec = recurrence_ttfts(arrivals, prefills)
        assert via_rec == pytest.approx(via_fcfs, abs=1e-12)


def test_tpot_even_spacing():
    # 4 tokens 50 ms apart: mean gap is exactly 0.05.
    rec = record_for(0.0, [1.0, 1.05, 1.10, 1.15])
    assert rec.tpot == pytest.approx(0.05)


def test_tpot_single_token_is_zero():
    rec = record_for(0.0, [1.0])
    assert rec.tpot == 0.0
    assert rec.tpot_ok


def test_tpot_requires_tokens():
    rec = record_for(0.0, [1.0])
    rec.token_times = []
    with pytest.raises(ValueError):
        compute_tpot(rec)


def test_tpot_equals_mean_of_gaps():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        m = int(rng.integers(2, 30))
        gaps = rng.uniform(1e-4, 0.5, size=m - 1)
        times = np.concatenate([[rng.uniform(0, 5)], gaps]).cumsum()
        rec = record_for(0.0, times.tolist())
        assert rec.tpot == pytest.approx(float(gaps.mean()), rel=1e-12)


def test_record_slo_flags():
    slo = SLOConfig(ttft_slo=1.0, tpot_slo=0.1)
    good = record_for(0.0, [0.5, 0.55, 0.6], slo=slo)
    assert good.ttft_ok and good.tpot_ok and good.slo_ok
    late_first = record_for(0.0, [1.5, 1.55], slo=slo)
    assert not late_first.ttft_ok and late_first.tpot_ok and not late_first.slo_ok
    slow_decode = record_for(0.0, [0.5, 0.9], slo=slo)
    assert slow_decode.ttft_ok and not slow_decode.tpot_ok and not slow_decode.slo_ok


def test_record_slo_boundary_is_inclusive():
    slo = SLOConfig(ttft_slo=1.0, tpot_slo=0.5)
    rec = record_for(0.0, [1.0, 1.5], slo=slo)
    assert rec.ttft == 1.0 and rec.tpot == 0.5
    assert rec.slo_ok


def test_phase_request_identity_semantics():
    # Two requests with equal field values must not compare equal: instances
    # track them in lists and remove by identity.
    a = PhaseRequest(request_id=1, phase=Phase.DECODE, prompt_len=10, output_len=5)
    b = PhaseRequest(request_id=1, phase=Phase.DECODE, prompt_len=10, output_len=5)
    assert a != b
    bucket = [a, b]
    bucket.remove(b)
    assert bucket == [a]
