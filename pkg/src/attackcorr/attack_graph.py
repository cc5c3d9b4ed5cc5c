"""Logical AND/OR attack graphs and risk propagation over them.

Leaves (``fact``) are base facts, AND nodes (``rule``) are rule
instantiations, i.e. attack actions, and OR nodes (``derived``) are
capabilities the attacker can reach.  Risk flows bottom-up: an action
succeeds with its rule's local probability when all premises hold, a
capability holds when any action deriving it succeeds (noisy-OR).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Mapping, Sequence

from .datalog import DerivationTrace, Rule, load_rules
from .errors import CyclicGraph, InconsistentTrace, UnknownPinnedLabel
from .facts import Fact, FactBase

FACT, RULE, DERIVED = "fact", "rule", "derived"


@dataclass
class AGNode:
    id: int
    kind: str
    label: str
    fact: Fact | None = None  # fact and derived nodes
    rule_label: str | None = None  # rule nodes
    signature: str | None = None
    local_probability: float | None = None
    silent: bool = False
    risk: float | None = None
    pinned: bool = False


@dataclass
class AttackGraph:
    nodes: dict[int, AGNode] = field(default_factory=dict)
    edges: set[tuple[int, int]] = field(default_factory=set)
    goals: list[int] = field(default_factory=list)
    removed_edges: list[tuple[int, int]] = field(default_factory=list)

    def preds(self, node_id: int) -> list[int]:
        return sorted(s for s, d in self.edges if d == node_id)

    def succs(self, node_id: int) -> list[int]:
        return sorted(d for s, d in self.edges if s == node_id)

    def of_kind(self, kind: str) -> list[AGNode]:
        return [self.nodes[i] for i in sorted(self.nodes) if self.nodes[i].kind == kind]

    def by_fact(self) -> dict[Fact, int]:
        return {n.fact: n.id for n in self.nodes.values() if n.fact is not None}

    def by_label(self, label: str) -> list[AGNode]:
        return [self.nodes[i] for i in sorted(self.nodes) if self.nodes[i].label == label]

    def topological_order(self) -> list[int]:
        """Kahn's order with smallest-id-first tie breaking."""
        sorter = TopologicalSorter({n: self.preds(n) for n in self.nodes})
        try:
            sorter.prepare()
        except CycleError as exc:
            raise CyclicGraph(f"attack graph has a cycle: {exc.args[1]}") from None
        order = []
        while sorter.is_active():
            ready = sorted(sorter.get_ready())
            order.extend(ready)
            sorter.done(*ready)
        return order

    def is_assessed(self) -> bool:
        return all(n.risk is not None for n in self.nodes.values())


def signature(rule_label: str, derived: Fact) -> str:
    return f"{rule_label}:{derived}"


def build_attack_graph(
    traces: Sequence[DerivationTrace],
    base: FactBase | Iterable[Fact],
    rules: Sequence[Rule] | None = None,
    step_labels: Mapping[str, str] | None = None,
) -> AttackGraph:
    base_facts = set(base.facts if isinstance(base, FactBase) else base)
    rules_by_label = {r.label: r for r in (rules if rules is not None else load_rules())}
    step_labels = step_labels or {}
    derived = {t.derived for t in traces}
    for t in traces:
        if t.rule_label not in rules_by_label:
            raise InconsistentTrace(f"trace for {t.derived} names unknown rule {t.rule_label!r}")
        for p in t.premises:
            if p not in base_facts and p not in derived:
                raise InconsistentTrace(f"premise {p} of {t.derived} is neither a base nor a derived fact")
        if t.derived in base_facts:
            raise InconsistentTrace(f"{t.derived} is a base fact and cannot be derived")

    unique = sorted({(t.derived, t.rule_label, t.premises) for t in traces})
    leaves = sorted({p for _, _, prem in unique for p in prem if p in base_facts})
    ag = AttackGraph()
    ids: dict[Fact, int] = {}
    for f in leaves:
        ids[f] = len(ag.nodes)
        ag.nodes[ids[f]] = AGNode(ids[f], FACT, str(f), fact=f)
    for f in sorted(derived):
        ids[f] = len(ag.nodes)
        ag.nodes[ids[f]] = AGNode(ids[f], DERIVED, str(f), fact=f)
    for head, rule_label, premises in unique:
        rule = rules_by_label[rule_label]
        sig = signature(rule_label, head)
        nid = len(ag.nodes)
        ag.nodes[nid] = AGNode(
            nid, RULE, step_labels.get(sig, sig), rule_label=rule_label, signature=sig,
            local_probability=rule.local_probability, silent=rule.silent,
        )
        for p in premises:
            ag.edges.add((ids[p], nid))
        ag.edges.add((nid, ids[head]))
    _cut_cycles(ag)
    ag.goals = identify_goals(ag)
    return ag


def _cut_cycles(ag: AttackGraph) -> None:
    while True:
        try:
            TopologicalSorter({n: ag.preds(n) for n in ag.nodes}).prepare()
            return
        except CycleError as exc:
            cycle = exc.args[1]
        cut = [
            (a, b) for a, b in zip(cycle, cycle[1:])
            if ag.nodes[a].kind == RULE and (a, b) in ag.edges
        ]
        if not cut:
            cut = [(b, a) for a, b in zip(cycle, cycle[1:]) if ag.nodes[b].kind == RULE and (b, a) in ag.edges]
        rule_id, target = min(cut, key=lambda e: (ag.nodes[e[0]].local_probability, e[0]))
        ag.edges.discard((rule_id, target))
        ag.removed_edges.append((rule_id, target))
        # a rule node without a conclusion is no longer an action
        for edge in [e for e in ag.edges if rule_id in e]:
            ag.edges.discard(edge)
        del ag.nodes[rule_id]


def identify_goals(ag: AttackGraph) -> list[int]:
    sources = {s for s, _ in ag.edges}
    return [n.id for n in ag.of_kind(DERIVED) if n.id not in sources]


def assess_risk(
    ag: AttackGraph,
    vuln_scores: Mapping[str, float] | None = None,
    pinned: Mapping[str, float] | None = None,
) -> AttackGraph:
    """Return a copy of ``ag`` with every node's ``risk`` filled.

    Base facts hold with certainty except ``vuln_exists`` facts, which hold
    with the vulnerability's CVSS base score divided by ten.  Pinned labels
    take their pinned value and feed it downstream unchanged.
    """
    vuln_scores = vuln_scores or {}
    pinned = dict(pinned or {})
    labels = {n.label for n in ag.nodes.values()}
    unknown = sorted(set(pinned) - labels)
    if unknown:
        raise UnknownPinnedLabel(f"pinned labels not in attack graph: {unknown}")
    out = copy.deepcopy(ag)
    for nid in out.topological_order():
        node = out.nodes[nid]
        if node.label in pinned:
            node.risk = float(pinned[node.label])
            node.pinned = True
        elif node.kind == FACT:
            node.risk = 1.0
            if node.fact.predicate == "vuln_exists":
                cve = node.fact.args[1]
                if cve in vuln_scores:
                    node.risk = float(vuln_scores[cve]) / 10.0
        elif node.kind == RULE:
            node.risk = node.local_probability * math.prod(out.nodes[p].risk for p in out.preds(nid))
        else:
            node.risk = 1.0 - math.prod(1.0 - out.nodes[p].risk for p in out.preds(nid))
    return out


def export_document(ag: AttackGraph) -> dict:
    return {
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind,
                "label": n.label,
                "risk": n.risk,
                **({"rule": n.rule_label, "local_probability": n.local_probability, "silent": n.silent}
                   if n.kind == RULE else {}),
            }
            for n in (ag.nodes[i] for i in sorted(ag.nodes))
        ],
        "edges": [list(e) for e in sorted(ag.edges)],
        "goals": list(ag.goals),
        "removed_edges": [list(e) for e in ag.removed_edges],
    }
