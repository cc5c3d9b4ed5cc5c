import math
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attackcorr.correlator import (
    AlertEvent,
    ObservationInstance,
    brute_force_correlate,
    chain_structure,
    correlate,
    map_alerts,
    parse_alerts,
)
from attackcorr.errors import CyclicGraph, ModelMismatch, ParseError, TooLarge, UnknownDetector
from attackcorr.hcpn import NOISE_ID, HcpnModel, ObservationNode, Place, Transition
from attackcorr.knowledge_graph import load_scenario

from nets import random_net, random_observations


def toy_chain(risks=(0.5, 0.4), emission=0.9, fp=0.05):
    places = {p: Place(p, p, p == "p0") for p in ("p0", "p1", "p2")}
    transitions = {
        "t1": Transition("t1", "first", risks[0], ("p0",), ("p1",)),
        "t2": Transition("t2", "second", risks[1], ("p1",), ("p2",)),
        NOISE_ID: Transition(NOISE_ID, "noise", 1.0, (), ()),
    }
    observations = {
        "o1": ObservationNode("o1", "a", emission, "t1", "ids"),
        "o2": ObservationNode("o2", "b", emission, "t2", "ids"),
    }
    return HcpnModel(places, transitions, observations, [], NOISE_ID, None, fp, {"ids": fp})


def obs(model, indicators):
    return [
        ObservationInstance(AlertEvent(10 * j, "ids", ind, "h"),
                            tuple(o.id for o in model.observations.values() if o.indicator_type == ind), j)
        for j, ind in enumerate(indicators)
    ]


def test_two_transition_chain():
    model = toy_chain()
    result = correlate(model, obs(model, ["a", "b"]))
    assert result.fired_ids == ["t1", "t2"]
    assert [s.supports for s in result.steps] == [(0,), (1,)]
    expected = math.log(0.5) + math.log(0.4) + 2 * math.log(0.9)
    assert abs(result.log_likelihood - expected) <= 1e-12
    oracle = brute_force_correlate(model, obs(model, ["a", "b"]))
    assert oracle.fired_ids == result.fired_ids


def test_no_retroactive_support():
    model = toy_chain()
    # "b" before "a": t2 cannot be supported before t1 fires
    result = correlate(model, obs(model, ["b", "a"]))
    assert brute_force_correlate(model, obs(model, ["b", "a"])).log_likelihood == pytest.approx(
        result.log_likelihood, abs=1e-9)
    for s in result.steps:
        assert list(s.supports) == sorted(s.supports)


def test_ambiguous_observation():
    places = {p: Place(p, p, p == "p0") for p in ("p0", "p1", "p2", "p3")}
    transitions = {
        "t1": Transition("t1", "a", 0.6, ("p0",), ("p1",)),
        "t2": Transition("t2", "b", 0.7, ("p0",), ("p2",)),
        "t3": Transition("t3", "c", 0.5, ("p1",), ("p3",)),
        NOISE_ID: Transition(NOISE_ID, "noise", 1.0, (), ()),
    }
    observations = {
        "o1": ObservationNode("o1", "x", 0.9, "t1", "ids"),
        "o2": ObservationNode("o2", "x", 0.8, "t2", "ids"),
    }
    model = HcpnModel(places, transitions, observations, [], NOISE_ID, None, 0.05, {})
    o = obs(model, ["x"])
    assert len(o[0].candidate_nodes) == 2
    dp, bf = correlate(model, o), brute_force_correlate(model, o)
    assert dp.fired_ids == bf.fired_ids == ["t2"]  # 0.7*0.8 beats 0.6*0.9
    assert abs(dp.log_likelihood - bf.log_likelihood) <= 1e-12


def test_empty_stream():
    model = toy_chain()
    for fn in (correlate, brute_force_correlate):
        r = fn(model, [])
        assert r.steps == [] and r.noise_assignments == [] and r.log_likelihood == 0.0


def test_unknown_node_is_model_mismatch():
    model = toy_chain()
    bad = [ObservationInstance(AlertEvent(0, "ids", "a", "h"), ("o99",), 0)]
    with pytest.raises(ModelMismatch):
        correlate(model, bad)


def test_brute_force_guard():
    rng = random.Random(3)
    model = random_net(rng, max_steps=12)
    many = [ObservationInstance(AlertEvent(j, "ids", "alpha", "h"), (), j) for j in range(9)]
    with pytest.raises(TooLarge):
        brute_force_correlate(model, many)


def check_result(model, observations, result):
    n = len(observations)
    indices = [i for s in result.steps for i in s.supports] + list(result.noise_assignments)
    assert sorted(indices) == list(range(n))
    marking = model.closure(model.initial_marking)
    for s in result.steps:
        assert model.enabled(s.transition_id, marking)
        marking = model.closure(model.fire(s.transition_id, marking))
        assert list(s.supports) == sorted(s.supports)
    firsts = [s.supports[0] for s in result.steps if s.supports]
    assert firsts == sorted(firsts)


@pytest.mark.parametrize("seed", range(200))
def test_oracle_equivalence(seed):
    rng = random.Random(seed)
    model = random_net(rng)
    observations = random_observations(rng, model)
    dp = correlate(model, observations)
    bf = brute_force_correlate(model, observations)
    assert abs(dp.log_likelihood - bf.log_likelihood) <= 1e-9
    assert dp.fired_ids == bf.fired_ids
    check_result(model, observations, dp)
    m = max(len(model.steps()), 1)
    assert dp.operations <= 7 * m * m * max(len(observations), 1)


def test_oracle_runtime_budget():
    start = time.monotonic()
    for seed in range(200):
        rng = random.Random(seed)
        model = random_net(rng)
        o = random_observations(rng, model)
        correlate(model, o)
        brute_force_correlate(model, o)
    assert time.monotonic() - start < 60.0


def test_operation_count_grows_quadratically():
    rng = random.Random(11)
    for _ in range(30):
        model = random_net(rng, max_steps=40, max_silent=5)
        o = random_observations(rng, model, max_obs=30)
        m = max(len(model.steps()), 1)
        assert correlate(model, o).operations <= 7 * m * m * max(len(o), 1)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6))
def test_noise_floor_single_observation(seed):
    rng = random.Random(seed)
    model = random_net(rng)
    o = random_observations(rng, model, max_obs=1)[:1]
    if not o:
        return
    fp = model.noise_score("ids")
    weak = all(
        model.observations[c].emission * model.transitions[model.observations[c].transition].risk < fp
        for c in o[0].candidate_nodes
    )
    if weak:
        assert correlate(model, o).noise_assignments == [0]


def test_unmatched_stream_is_all_noise():
    rng = random.Random(5)
    model = random_net(rng)
    unmatched = [ObservationInstance(AlertEvent(j, "ids", "dns_tunnel", "h"), (), j) for j in range(5)]
    r = correlate(model, unmatched)
    assert r.steps == [] and r.noise_assignments == list(range(5))


def cycle_model(live):
    # t2 and t3 feed each other; only t1 can make p1 available, and only if live
    places = {p: Place(p, p, p == "p0") for p in ("p0", "p1", "p2", "p3")}
    transitions = {
        "t1": Transition("t1", "a", 0.5, ("p0",), ("p1" if live else "p3",)),
        "t2": Transition("t2", "b", 0.5, ("p1",), ("p2",)),
        "t3": Transition("t3", "c", 0.5, ("p2",), ("p1",)),
        NOISE_ID: Transition(NOISE_ID, "noise", 1.0, (), ()),
    }
    return HcpnModel(places, transitions, {}, [], NOISE_ID)


def test_dead_cycle_is_ignored():
    order, start, preds = chain_structure(cycle_model(live=False))
    assert order == ["t1"]
    assert correlate(cycle_model(live=False), []).steps == []


def test_live_cycle_rejected():
    with pytest.raises(CyclicGraph):
        chain_structure(cycle_model(live=True))


# alert parsing and mapping


def test_parse_alerts():
    alerts = parse_alerts("# comment\n5|ids|x|h|a=1,b=2\n\n3|ids|y|h\n")
    assert [a.timestamp for a in alerts] == [5, 3]
    assert alerts[0].attributes == {"a": "1", "b": "2"}
    assert parse_alerts(alerts[0].to_line())[0] == alerts[0]
    with pytest.raises(ParseError) as info:
        parse_alerts("1|ids|x|h\nbogus\n")
    assert info.value.line == 2
    with pytest.raises(ParseError):
        parse_alerts("-1|ids|x|h")
    with pytest.raises(ParseError):
        parse_alerts("1||x|h")


def test_map_case_study_alerts(case_model, case_alerts):
    instances = map_alerts(case_model.kg, case_model.hcpn, case_alerts)
    assert len(instances) == 5
    for inst in instances:
        assert inst.candidate_nodes
        assert all(not case_model.hcpn.transitions[case_model.hcpn.observations[c].transition].silent
                   for c in inst.candidate_nodes)
    assert map_alerts(case_model.kg, case_model.hcpn, []) == []


def test_map_orders_by_timestamp_then_arrival(case_model):
    alerts = [AlertEvent(20, "net-ids-1", "ssh_login", "dsr-platform"),
              AlertEvent(10, "net-ids-1", "ssh_bruteforce", "10.10.0.5"),
              AlertEvent(20, "net-ids-1", "ssh_login_attempt", "dsr-platform")]
    instances = map_alerts(case_model.kg, case_model.hcpn, alerts)
    assert [i.alert.indicator_type for i in instances] == ["ssh_bruteforce", "ssh_login", "ssh_login_attempt"]
    assert [i.order_index for i in instances] == [0, 1, 2]
    assert instances[0].candidate_nodes  # address resolves to the host


def test_map_unknown_detector_and_unmatched(case_model, mini_path):
    with pytest.raises(UnknownDetector):
        map_alerts(case_model.kg, case_model.hcpn, [AlertEvent(0, "ghost", "x", "dsr-platform")])
    inst = map_alerts(case_model.kg, case_model.hcpn, [AlertEvent(0, "net-ids-1", "dns_tunnel", "dsr-platform")])
    assert inst[0].candidate_nodes == ()


def test_case_study_sequence(case_model, case_alerts):
    model = case_model.hcpn
    instances = map_alerts(case_model.kg, model, case_alerts)
    result = correlate(model, instances)
    assert [s.label for s in result.steps] == [
        "Dictionary Attack", "Access to DSR Platform", "Escalation of Privileges", "Manipulation of Smart Meter Data",
    ]
    assert result.noise_assignments == []
    check_result(model, instances, result)
    truncated = correlate(model, instances[:2])
    assert [s.label for s in truncated.steps] == ["Dictionary Attack"]
