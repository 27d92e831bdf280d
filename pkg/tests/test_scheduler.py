import pytest

from pdsim.core import Phase, PhaseRequest, PoolKind, SLOConfig, TraceRequest
from pdsim.cost_model import PrefillCostParams
from pdsim.pools import PoolSet
from pdsim.scheduler import GlobalScheduler, SchedulerConfig, Strategy

# predict(L) = L / 1000 keeps the arithmetic in the tests readable.
PREDICTOR = PrefillCostParams(a2=0.0, a1=1e-3, a0=0.0)
SLO = SLOConfig(ttft_slo=2.0, tpot_slo=0.1)
MAX_TOKENS = 4750


class FakeInstance:
    """Duck-typed stand-in exposing exactly the load surface dispatch reads."""

    def __init__(self, delay=0.0, tokens=0, interval=None, prefill_work=False, decode_work=False):
        self.delay = delay
        self.tokens = tokens
        self.interval = interval
        self.prefill_work = prefill_work
        self.decode_work = decode_work
        self.busy_until = None

    def predicted_prefill_delay(self, predictor, now):
        return self.delay

    def running_tokens(self):
        return self.tokens

    def avg_token_interval(self, window, now):
        return self.interval

    def has_prefill_work(self):
        return self.prefill_work

    def has_decode_work(self):
        return self.decode_work


def make_scheduler(n_prefill, n_decode, strategy=Strategy.SLO_AWARE, **cfg):
    assignment = {}
    for i in range(n_prefill):
        assignment[i] = PoolKind.PREFILL
    for i in range(n_prefill, n_prefill + n_decode):
        assignment[i] = PoolKind.DECODE
    pools = PoolSet(assignment)
    instances = {i: FakeInstance() for i in assignment}
    sched = GlobalScheduler(
        pools,
        instances,
        PREDICTOR,
        SLO,
        MAX_TOKENS,
        SchedulerConfig(strategy=strategy, **cfg),
        monitor_period=1.0,
        interval_window=5.0,
    )
    return sched, instances


def prefill_request(rid=0, input_len=300):
    return TraceRequest(id=rid, arrival=0.0, input_len=input_len, output_len=10)


def decode_request(rid=0, prompt=300):
    return PhaseRequest(request_id=rid, phase=Phase.DECODE, prompt_len=prompt, output_len=10)


def branches(sched):
    return [d.get("branch") or d.get("trigger") for d in sched.decisions]


def flips(sched):
    return [d for d in sched.decisions if d["kind"] == "flip"]


def test_config_validation():
    with pytest.raises(ValueError):
        SchedulerConfig(theta_d=0.0)
    with pytest.raises(ValueError):
        SchedulerConfig(theta_busy=1.5)


def test_prefill_picks_least_delay_under_threshold():
    sched, inst = make_scheduler(2, 2)
    inst[0].delay = 0.5
    inst[1].delay = 0.8
    # 0.5 + 0.3 predicted for a 300-token prompt is well under 2.0.
    assert sched.schedule_prefill(prefill_request(input_len=300), 0.0) == 0
    assert branches(sched) == ["alg1:t1"]


def test_prefill_tie_breaks_by_pool_order():
    sched, inst = make_scheduler(3, 1)
    inst[0].delay = inst[1].delay = inst[2].delay = 0.4
    assert sched.schedule_prefill(prefill_request(), 0.0) == 0


def test_prefill_overflows_to_draining_instance():
    """When every prefill instance is over the TTFT threshold, a decode
    instance drifting toward prefill is the second choice."""
    sched, inst = make_scheduler(1, 2)
    inst[0].delay = 5.0
    inst[1].decode_work = True
    sched.try_move_decode_to_prefill(0.0, trigger="test")
    assert sched.pools.pool_of(1) is PoolKind.D_TO_P
    inst[1].delay = 0.2
    assert sched.schedule_prefill(prefill_request(), 1.0) == 1
    assert branches(sched)[-1] == "alg1:t2"


def test_prefill_flips_decode_instance_when_load_low():
    sched, inst = make_scheduler(1, 2)
    inst[0].delay = 5.0
    inst[1].tokens = 100
    inst[2].tokens = 50
    chosen = sched.schedule_prefill(prefill_request(), 0.0)
    # Least-loaded decode instance (2) flips and takes the dispatch.
    assert chosen == 2
    assert sched.pools.pool_of(2) is PoolKind.PREFILL
    assert [d["trigger"] for d in flips(sched)] == ["alg1"]
    assert branches(sched)[-1] == "alg1:flip"


def test_prefill_does_not_strip_busy_decode():
    """Both phases saturated: prefill keeps its backlog rather than stealing
    a decode instance."""
    sched, inst = make_scheduler(1, 2)
    inst[0].delay = 5.0
    inst[1].tokens = 4000  # > theta_d * 4750
    inst[2].tokens = 4200
    chosen = sched.schedule_prefill(prefill_request(), 0.0)
    assert chosen == 0
    assert flips(sched) == []
    assert branches(sched) == ["alg1:fallback"]


def test_prefill_degenerate_no_prefill_capable():
    sched, inst = make_scheduler(0, 2)
    inst[0].tokens = 4000
    inst[1].tokens = 4200
    inst[0].delay = 0.7
    inst[1].delay = 0.1
    chosen = sched.schedule_prefill(prefill_request(), 0.0)
    assert chosen == 1
    assert branches(sched) == ["alg1:degenerate"]


def test_decode_zero_transfer_on_flipped_prefill_instance():
    sched, inst = make_scheduler(2, 1)
    inst[0].prefill_work = True
    sched.try_move_prefill_to_decode(0.0, trigger="test")
    assert sched.pools.pool_of(0) is PoolKind.P_TO_D
    # Request prefilled on 0; its KV is already on a decode-role instance.
    assert sched.schedule_decode(decode_request(), prefill_instance=0, now=1.0) == 0
    assert branches(sched)[-1] == "alg2:zero-transfer"


def test_decode_picks_min_running_tokens():
    sched, inst = make_scheduler(1, 3)
    inst[1].tokens = 900
    inst[2].tokens = 300
    inst[3].tokens = 600
    assert sched.schedule_decode(decode_request(), prefill_instance=0, now=0.0) == 2
    assert branches(sched) == ["alg2:t1"]


def test_decode_skips_unhealthy_min_instance():
    """The min-token instance failing its interval check sends the request to
    the transition pool, not to the next decode instance."""
    sched, inst = make_scheduler(2, 2)
    inst[2].tokens = 100
    inst[2].interval = 0.3  # breaching TPOT threshold 0.1
    inst[3].tokens = 200
    inst[3].interval = 0.3
    inst[0].delay = 1.0
    inst[1].delay = 0.1
    inst[1].prefill_work = True
    sched.try_move_prefill_to_decode(0.0, trigger="test")  # least delay: 1 -> P_TO_D
    assert sched.pools.pool_of(1) is PoolKind.P_TO_D
    inst[1].tokens = 500
    chosen = sched.schedule_decode(decode_request(), prefill_instance=0, now=1.0)
    assert chosen == 1
    assert branches(sched)[-1] == "alg2:t2"


def test_decode_flips_prefill_without_load_check():
    """Decode saturated: a prefill instance is handed over even though it has
    a deep backlog of its own.  The handover asymmetry is deliberate."""
    sched, inst = make_scheduler(2, 1)
    inst[2].tokens = MAX_TOKENS + 1000  # inadmissible
    inst[0].delay = 50.0
    inst[0].prefill_work = True
    inst[1].delay = 80.0
    inst[1].prefill_work = True
    chosen = sched.schedule_decode(decode_request(), prefill_instance=0, now=0.0)
    # Least predicted backlog (instance 0) flips despite being deeply loaded.
    assert chosen == 0
    assert sched.pools.pool_of(0) is PoolKind.P_TO_D
    assert [d["trigger"] for d in flips(sched)] == ["alg2"]
    assert branches(sched)[-1] == "alg2:flip"


def test_decode_fallback_picks_lighter_candidate():
    sched, inst = make_scheduler(1, 2, enable_flips=False)
    inst[1].tokens = 8000
    inst[2].tokens = 7000
    inst[2].prefill_work = True
    chosen = sched.schedule_decode(decode_request(), prefill_instance=0, now=0.0)
    assert chosen == 2
    assert branches(sched) == ["alg2:fallback"]
    assert flips(sched) == []


def test_decode_fallback_prefers_t1_when_no_transition_pool():
    sched, inst = make_scheduler(1, 1, enable_flips=False)
    inst[1].tokens = 9000  # over max_tokens, but it is all there is
    chosen = sched.schedule_decode(decode_request(), prefill_instance=0, now=0.0)
    assert chosen == 1
    assert branches(sched) == ["alg2:fallback"]


def test_decode_forced_local_single_instance():
    sched, inst = make_scheduler(1, 0)
    chosen = sched.schedule_decode(decode_request(), prefill_instance=0, now=0.0)
    assert chosen == 0
    assert branches(sched) == ["alg2:forced-local"]
    # The lone instance keeps its prefill role; there is nothing to flip.
    assert sched.pools.pool_of(0) is PoolKind.PREFILL


def test_move_decode_to_prefill_refuses_last_decode():
    sched, _ = make_scheduler(1, 1)
    assert sched.try_move_decode_to_prefill(0.0) is None
    assert sched.pools.transitions == []


def test_move_decode_to_prefill_prefers_transition_pool():
    sched, inst = make_scheduler(2, 2)
    inst[0].prefill_work = True
    sched.try_move_prefill_to_decode(0.0, trigger="test")  # put 0 in P_TO_D
    assert sched.pools.pool_of(0) is PoolKind.P_TO_D
    inst[0].tokens = 3000
    inst[2].tokens = 10  # far lighter, but not mid-transition
    inst[3].tokens = 2000
    moved = sched.try_move_decode_to_prefill(1.0)
    # A draining instance reverses in preference to pulling a settled one.
    assert moved == 0
    assert sched.pools.pool_of(0) is PoolKind.PREFILL


def test_move_prefill_to_decode_refuses_last_prefill():
    sched, _ = make_scheduler(1, 1)
    assert sched.try_move_prefill_to_decode(0.0) is None
    assert sched.pools.transitions == []


def test_decode_load_is_low_conditions():
    sched, inst = make_scheduler(2, 0)
    assert not sched.decode_load_is_low(0.0)  # no decode-capable instance

    sched, inst = make_scheduler(1, 2)
    inst[1].tokens = 1000
    inst[2].tokens = 3000
    assert sched.decode_load_is_low(0.0)  # min 1000 <= 0.5 * 4750, no intervals
    inst[1].interval = 0.08
    inst[2].interval = 0.09
    assert sched.decode_load_is_low(0.0)  # mean 0.085 <= 0.1
    inst[1].interval = 0.15
    assert not sched.decode_load_is_low(0.0)  # mean 0.12 > 0.1
    inst[1].interval = None
    inst[2].interval = None
    inst[1].tokens = 2400  # > 0.5 * 4750
    assert not sched.decode_load_is_low(0.0)


def test_monitor_tpot_breach_must_sustain():
    """One bad sample is noise; two consecutive monitor periods over the
    threshold trigger a single prefill-to-decode flip."""
    sched, inst = make_scheduler(2, 1)
    inst[2].interval = 0.25
    sched.monitor_tick(None, 1.0)
    assert flips(sched) == []
    sched.monitor_tick(None, 2.0)
    assert [d["trigger"] for d in flips(sched)] == ["monitor:tpot"]
    assert flips(sched)[0]["time"] == 2.0


def test_monitor_tpot_breach_resets_on_recovery():
    sched, inst = make_scheduler(2, 1)
    inst[2].interval = 0.25
    sched.monitor_tick(None, 1.0)
    inst[2].interval = 0.05
    sched.monitor_tick(None, 2.0)  # healthy: accumulator resets
    inst[2].interval = 0.25
    sched.monitor_tick(None, 3.0)
    assert flips(sched) == []
    sched.monitor_tick(None, 4.0)
    assert len(flips(sched)) == 1
    assert flips(sched)[0]["time"] == 4.0


def test_monitor_hands_idle_prefill_to_busy_decode():
    sched, inst = make_scheduler(2, 2)
    inst[2].tokens = 4000
    inst[3].tokens = 4000  # aggregate 8000 / 9500 = 0.84 > 0.75
    inst[0].prefill_work = True  # not idle: keeps its role
    tick_flips = lambda: [d for d in flips(sched) if d["trigger"] == "monitor:idle"]
    sched.monitor_tick(None, 1.0)
    assert [d["instance"] for d in tick_flips()] == [1]
    assert sched.pools.pool_of(1) is PoolKind.DECODE
    assert sched.pools.pool_of(0) is PoolKind.PREFILL


def test_monitor_idle_handover_keeps_one_prefill():
    sched, inst = make_scheduler(2, 1)
    inst[2].tokens = 4600
    sched.monitor_tick(None, 1.0)
    # Both prefill instances are idle, but only one may leave.
    assert len([d for d in flips(sched) if d["trigger"] == "monitor:idle"]) == 1
    assert sched.pools.prefill_capable() == 1


def test_monitor_quiet_under_threshold():
    sched, inst = make_scheduler(2, 2)
    inst[2].tokens = 1000
    inst[3].tokens = 1000
    inst[2].interval = 0.05
    sched.monitor_tick(None, 1.0)
    assert flips(sched) == []


def test_monitor_inert_for_static_strategies():
    for strategy in (Strategy.MINIMAL_LOAD, Strategy.ROUND_ROBIN):
        sched, inst = make_scheduler(2, 2, strategy=strategy)
        inst[2].tokens = 4700
        inst[3].tokens = 4700
        inst[2].interval = 0.5
        sched.monitor_tick(None, 1.0)
        sched.monitor_tick(None, 2.0)
        assert flips(sched) == []


def test_monitor_inert_when_flips_disabled():
    sched, inst = make_scheduler(2, 2, enable_flips=True)
    disabled, inst2 = make_scheduler(2, 2, enable_flips=False)
    for i in (2, 3):
        inst[i].tokens = inst2[i].tokens = 4700
        inst[i].interval = inst2[i].interval = 0.5
    sched.monitor_tick(None, 1.0)
    sched.monitor_tick(None, 2.0)
    disabled.monitor_tick(None, 1.0)
    disabled.monitor_tick(None, 2.0)
    assert flips(sched) != []
    assert flips(disabled) == []


def test_minimal_load_dispatch():
    sched, inst = make_scheduler(2, 2, strategy=Strategy.MINIMAL_LOAD)
    inst[0].delay = 0.9
    inst[1].delay = 0.2
    inst[2].tokens = 500
    inst[3].tokens = 100
    assert sched.schedule_prefill(prefill_request(), 0.0) == 1
    assert sched.schedule_decode(decode_request(), prefill_instance=1, now=0.0) == 3
    assert branches(sched) == ["min-load", "min-load"]


def test_round_robin_cycles_in_pool_order():
    sched, _ = make_scheduler(2, 3, strategy=Strategy.ROUND_ROBIN)
    targets = [sched.schedule_prefill(prefill_request(rid=i), 0.0) for i in range(5)]
    assert targets == [0, 1, 0, 1, 0]
    targets = [
        sched.schedule_decode(decode_request(rid=i), prefill_instance=0, now=0.0) for i in range(7)
    ]
    assert targets == [2, 3, 4, 2, 3, 4, 2]


def test_scheduler_threshold_overrides():
    sched, _ = make_scheduler(1, 1, ttft_threshold=0.8, tpot_threshold=0.05, tpot_breach_duration_s=7.0)
    assert sched.ttft_threshold == 0.8
    assert sched.tpot_threshold == 0.05
    assert sched.breach_duration == 7.0
    defaults, _ = make_scheduler(1, 1)
    assert defaults.ttft_threshold == SLO.ttft_slo
    assert defaults.tpot_threshold == SLO.tpot_slo
    assert defaults.breach_duration == 2.0  # two monitor periods
