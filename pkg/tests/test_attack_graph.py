import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attackcorr.attack_graph import DERIVED, FACT, RULE, assess_risk, build_attack_graph, export_document, identify_goals
from attackcorr.datalog import DerivationTrace, Literal, Rule, evaluate
from attackcorr.errors import CyclicGraph, InconsistentTrace, UnknownPinnedLabel
from attackcorr.facts import fact

TOL = 1e-12


def rule(label, p):
    return Rule(label, Literal("x", ("A",)), (Literal("y", ("A",)),), p)


def trace(derived, label, *premises):
    return DerivationTrace(fact(*derived), label, tuple(fact(*p) for p in premises))


def risks(ag):
    return {n.label: n.risk for n in ag.nodes.values()}


def test_chain():
    rules = [rule("r1", 0.8), rule("r2", 0.9)]
    traces = [trace(("d1",), "r1", ("f",)), trace(("d2",), "r2", ("d1",))]
    ag = assess_risk(build_attack_graph(traces, [fact("f")], rules))
    r = risks(ag)
    assert r["f()"] == 1.0
    assert abs(r["d1()"] - 0.8) <= TOL
    assert abs(r["d2()"] - 0.72) <= TOL
    assert [ag.nodes[g].label for g in ag.goals] == ["d2()"]


def test_diamond():
    vuln = ("vuln_exists", "h", "cve-1", "sw", "remote", "code_exec")
    rules = [rule("ra", 0.9), rule("rb", 0.8), rule("g_from_a", 0.5), rule("g_from_b", 1.0)]
    traces = [
        trace(("a",), "ra", ("f",)),
        trace(("b",), "rb", ("f",), vuln),
        trace(("g",), "g_from_a", ("a",)),
        trace(("g",), "g_from_b", ("b",)),
    ]
    ag = assess_risk(build_attack_graph(traces, [fact("f"), fact(*vuln)], rules), {"cve-1": 5.0})
    r = risks(ag)
    assert abs(r["a()"] - 0.9) <= TOL
    assert abs(r["b()"] - 0.4) <= TOL
    assert abs(r["g_from_a:g()"] - 0.45) <= TOL
    assert abs(r["g_from_b:g()"] - 0.4) <= TOL
    assert abs(r["g()"] - (1 - 0.55 * 0.6)) <= TOL
    g = next(n for n in ag.nodes.values() if n.label == "g()")
    assert len(ag.preds(g.id)) == 2


def test_two_goals():
    rules = [rule("r1", 0.7), rule("r2", 0.6), rule("r3", 0.5), rule("r4", 0.2)]
    traces = [
        trace(("x",), "r1", ("f",)),
        trace(("g1",), "r2", ("x",)),
        trace(("g2",), "r3", ("x",), ("f",)),
        trace(("g2",), "r4", ("f",)),
    ]
    ag = assess_risk(build_attack_graph(traces, [fact("f")], rules))
    r = risks(ag)
    assert abs(r["x()"] - 0.7) <= TOL
    assert abs(r["g1()"] - 0.42) <= TOL
    assert abs(r["g2()"] - (1 - 0.65 * 0.8)) <= TOL
    assert sorted(ag.nodes[g].label for g in ag.goals) == ["g1()", "g2()"]
    assert identify_goals(ag) == ag.goals


def test_minimal_graph():
    ag = build_attack_graph([trace(("d",), "r", ("f",))], [fact("f")], [rule("r", 0.9)])
    assert len(ag.nodes) == 3 and len(ag.edges) == 2
    assert [ag.nodes[g].label for g in ag.goals] == ["d()"]
    single = assess_risk(build_attack_graph([trace(("d",), "r", ("f",))], [fact("f")], [rule("r", 0.3)]))
    assert abs(risks(single)["d()"] - 0.3) <= TOL


def test_inconsistent_traces():
    with pytest.raises(InconsistentTrace):
        build_attack_graph([trace(("d",), "r", ("ghost",))], [fact("f")], [rule("r", 0.9)])
    with pytest.raises(InconsistentTrace):
        build_attack_graph([trace(("d",), "nope", ("f",))], [fact("f")], [rule("r", 0.9)])


def test_cycle_cut_removes_weakest_rule():
    rules = [
        Rule("ra", Literal("a", ()), (Literal("f", ()),), 0.9),
        Rule("rb", Literal("b", ()), (Literal("a", ()),), 0.9),
        Rule("back", Literal("a", ()), (Literal("b", ()),), 0.5),
    ]
    ev = evaluate(rules, {fact("f")})
    ag = build_attack_graph(ev.traces, {fact("f")}, rules)
    assert len(ag.removed_edges) == 1
    assert all(n.rule_label != "back" for n in ag.of_kind(RULE))
    ag.topological_order()
    r = risks(assess_risk(ag))
    assert abs(r["b()"] - 0.81) <= TOL


def test_pins_and_unknown_pin():
    rules = [rule("r1", 0.8), rule("r2", 0.9)]
    traces = [trace(("d1",), "r1", ("f",)), trace(("d2",), "r2", ("d1",))]
    ag = build_attack_graph(traces, [fact("f")], rules, {"r1:d1()": "Step One"})
    pinned = assess_risk(ag, pinned={"Step One": 0.5})
    r = risks(pinned)
    assert r["Step One"] == 0.5
    assert abs(r["d2()"] - 0.45) <= TOL
    with pytest.raises(UnknownPinnedLabel):
        assess_risk(ag, pinned={"No Such Step": 0.5})


def test_case_study_graph(case_model):
    ag = case_model.ag
    goals = {ag.nodes[g].label for g in ag.goals}
    assert "mission_compromised(self-consumption-optimization)" in goals
    r = {n.label: n.risk for n in ag.of_kind(RULE)}
    assert r["Dictionary Attack"] == 0.3
    assert r["Access to DSR Platform"] == 0.26
    assert r["Escalation of Privileges"] == 0.25
    assert r["Manipulation of Smart Meter Data"] == 0.96
    assert r["Sending Grid Harmful Control Commands"] == 0.93
    doc = export_document(ag)
    assert [n["id"] for n in doc["nodes"]] == sorted(n["id"] for n in doc["nodes"])


def check_structure(ag):
    for n in ag.nodes.values():
        preds, succs = ag.preds(n.id), ag.succs(n.id)
        if n.kind == FACT:
            assert preds == []
        elif n.kind == RULE:
            assert preds and len(succs) == 1 and ag.nodes[succs[0]].kind == DERIVED
        else:
            assert all(ag.nodes[p].kind == RULE for p in preds)


@st.composite
def random_traces(draw):
    n_facts = draw(st.integers(1, 4))
    n_derived = draw(st.integers(1, 6))
    facts = [fact(f"f{i}") for i in range(n_facts)]
    traces, rules = [], []
    for d in range(n_derived):
        for k in range(draw(st.integers(1, 3))):
            pool = facts + [fact(f"d{j}") for j in range(d)]
            premises = draw(st.lists(st.sampled_from(pool), min_size=1, max_size=3, unique=True))
            label = f"r{d}_{k}"
            rules.append(rule(label, draw(st.floats(0.05, 1.0))))
            traces.append(DerivationTrace(fact(f"d{d}"), label, tuple(premises)))
    used = {p for t in traces for p in t.premises}
    return traces, [f for f in facts if f in used], rules


def oracle_risk(traces, rules):
    """Recursive evaluation of the recurrence, straight from the traces."""
    prob = {r.label: r.local_probability for r in rules}
    memo = {}

    def risk(f):
        if f in memo:
            return memo[f]
        incoming = [t for t in traces if t.derived == f]
        if not incoming:
            memo[f] = 1.0
        else:
            miss = 1.0
            for t in incoming:
                p = prob[t.rule_label]
                for q in t.premises:
                    p *= risk(q)
                miss *= 1.0 - p
            memo[f] = 1.0 - miss
        return memo[f]

    return risk


@settings(max_examples=100, deadline=None)
@given(random_traces(), st.randoms(use_true_random=False))
def test_risk_invariants(data, rnd):
    traces, base, rules = data
    ag = assess_risk(build_attack_graph(traces, base, rules))
    check_structure(ag)
    oracle = oracle_risk(traces, rules)
    for n in ag.nodes.values():
        assert 0.0 <= n.risk <= 1.0
        ins = [ag.nodes[p].risk for p in ag.preds(n.id)]
        if n.kind == RULE:
            assert n.risk <= min(ins) + TOL
        elif n.kind == DERIVED:
            assert n.risk >= max(ins) - TOL
            assert abs(n.risk - oracle(n.fact)) <= 1e-12
    shuffled = list(traces)
    rnd.shuffle(shuffled)
    again = assess_risk(build_attack_graph(shuffled, list(reversed(base)), rules))
    assert risks(again) == risks(ag)
    # pin dominance
    target = rnd.choice([n.label for n in ag.of_kind(RULE)])
    pinned = assess_risk(ag, pinned={target: 0.123})
    assert all(n.risk == 0.123 for n in pinned.nodes.values() if n.label == target)


def test_topological_order_rejects_cycles():
    ag = build_attack_graph([trace(("d",), "r", ("f",))], [fact("f")], [rule("r", 0.9)])
    ag.edges.add((max(ag.nodes), min(ag.nodes)))
    ag.edges.add((min(ag.nodes), max(ag.nodes)))
    with pytest.raises(CyclicGraph):
        ag.topological_order()
