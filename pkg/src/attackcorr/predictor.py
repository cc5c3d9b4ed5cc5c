"""Bayesian next-step prediction over the attack graph.

Every attack-graph node becomes a binary variable.  Leaves carry their
assessed risk as prior, AND nodes succeed with the rule's local
probability when all premises hold, OR nodes hold when any parent holds.
Posteriors are exact, by variable elimination.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attack_graph import DERIVED, FACT, RULE, AttackGraph
from .correlator import CorrelationResult
from .errors import CyclicGraph, EvidenceConflict, ModelMismatch, UnassessedGraph

DEFAULT_THRESHOLD = 0.5
_LETTERS = string.ascii_letters


@dataclass(frozen=True)
class Factor:
    variables: tuple[int, ...]
    table: np.ndarray

    def reduce(self, evidence: Mapping[int, bool]) -> "Factor":
        if not any(v in evidence for v in self.variables):
            return self
        index = tuple(int(evidence[v]) if v in evidence else slice(None) for v in self.variables)
        return Factor(tuple(v for v in self.variables if v not in evidence), self.table[index])

    def sum_out(self, var: int) -> "Factor":
        axis = self.variables.index(var)
        return Factor(self.variables[:axis] + self.variables[axis + 1:], self.table.sum(axis=axis))


def multiply(factors: Sequence[Factor]) -> Factor:
    variables = tuple(dict.fromkeys(v for f in factors for v in f.variables))
    if len(variables) > len(_LETTERS):
        raise ValueError("factor too large for exact elimination")
    letter = {v: _LETTERS[i] for i, v in enumerate(variables)}
    spec = ",".join("".join(letter[v] for v in f.variables) for f in factors)
    spec += "->" + "".join(letter[v] for v in variables)
    return Factor(variables, np.einsum(spec, *(f.table for f in factors)))


@dataclass
class BayesNet:
    parents: dict[int, tuple[int, ...]]
    kinds: dict[int, str]
    probability: dict[int, float]  # leaf prior or AND success probability
    labels: dict[int, str]
    risk: dict[int, float]
    pinned: dict[int, bool]
    silent: dict[int, bool]
    order: list[int]
    transition_ids: dict[str, int] = field(default_factory=dict)

    def cpt(self, node: int) -> Factor:
        ps = self.parents[node]
        kind = self.kinds[node]
        if kind != DERIVED:
            return Factor(ps + (node,), _leaf_or_and(len(ps), self.probability[node]))
        table = np.zeros((2,) * (len(ps) + 1))
        true_rows = np.ones((2,) * len(ps), dtype=bool)
        if ps:
            true_rows[(0,) * len(ps)] = False
        else:
            true_rows = np.array(False)
        table[..., 1] = true_rows
        table[..., 0] = ~true_rows
        return Factor(ps + (node,), table)

    def ancestors(self, nodes: Iterable[int]) -> set[int]:
        seen: set[int] = set()
        stack = list(nodes)
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(self.parents[n])
        return seen

    def posteriors(self, queries: Iterable[int], evidence: Mapping[int, bool] | None = None) -> dict[int, float]:
        evidence = dict(evidence or {})
        for n, p in self.probability.items():
            if self.kinds[n] == FACT and p in (0.0, 1.0) and n not in evidence:
                evidence[n] = p == 1.0
        self._query(None, evidence)  # raises on impossible evidence
        return {q: float(evidence[q]) if q in evidence else self._query(q, evidence) for q in queries}

    def _query(self, q: int | None, evidence: Mapping[int, bool]) -> float:
        relevant = self.ancestors(([q] if q is not None else []) + [e for e in evidence if not self._trivial(e, evidence)])
        factors = [self.cpt(n).reduce(evidence) for n in sorted(relevant)]
        hidden = {v for f in factors for v in f.variables} - {q}
        while hidden:
            var = min(hidden, key=lambda v: (len({u for f in factors if v in f.variables for u in f.variables}), v))
            hidden.discard(var)
            touching = [f for f in factors if var in f.variables]
            factors = [f for f in factors if var not in f.variables]
            factors.append(multiply(touching).sum_out(var))
        joint = multiply(factors) if factors else Factor((), np.array(1.0))
        if q is None:
            total = float(joint.table.sum())
            if total <= 0.0:
                raise EvidenceConflict("evidence has zero probability under the network")
            return total
        table = joint.table.reshape(2)
        total = float(table.sum())
        if total <= 0.0:
            raise EvidenceConflict("evidence has zero probability under the network")
        return float(table[1] / total)

    def _trivial(self, node: int, evidence: Mapping[int, bool]) -> bool:
        return self.kinds[node] == FACT and self.probability[node] in (0.0, 1.0) and evidence[node] == (self.probability[node] == 1.0)


def _leaf_or_and(n_parents: int, p: float) -> np.ndarray:
    table = np.zeros((2,) * (n_parents + 1))
    on = (1,) * n_parents
    table[..., 0] = 1.0
    table[on + (1,)] = p
    table[on + (0,)] = 1.0 - p
    return table


def build_bn(ag: AttackGraph) -> BayesNet:
    if not ag.is_assessed():
        raise UnassessedGraph("attack graph must be risk-assessed")
    order = ag.topological_order()  # raises CyclicGraph
    parents = {n: tuple(ag.preds(n)) for n in ag.nodes}
    probability = {}
    for n, node in ag.nodes.items():
        if node.kind == FACT:
            probability[n] = float(node.risk)
        elif node.kind == RULE:
            probability[n] = float(node.local_probability)
    return BayesNet(
        parents,
        {n: node.kind for n, node in ag.nodes.items()},
        probability,
        {n: node.label for n, node in ag.nodes.items()},
        {n: float(node.risk) for n, node in ag.nodes.items()},
        {n: node.pinned for n, node in ag.nodes.items()},
        {n: node.silent for n, node in ag.nodes.items()},
        order,
        {f"t{n:04d}": n for n, node in ag.nodes.items() if node.kind == RULE},
    )


@dataclass(frozen=True)
class RankedStep:
    transition_id: str
    label: str
    posterior: float
    risk: float


@dataclass
class Prediction:
    ranking: list[RankedStep]
    predicted_next: RankedStep | None
    display_probability: float | None
    fired: list[str]


def predict_next(bn: BayesNet, result: CorrelationResult, threshold: float = DEFAULT_THRESHOLD) -> Prediction:
    """Rank unfired attack steps by posterior given the correlated sequence.

    Fired steps and the conditions they establish are set true.  The
    prediction is the best-ranked unfired step whose every premise has
    posterior at least ``threshold``.
    """
    evidence: dict[int, bool] = {}
    fired = result.fired_ids
    for tid in fired:
        if tid not in bn.transition_ids:
            raise ModelMismatch(f"fired transition {tid} not in Bayesian network")
        node = bn.transition_ids[tid]
        evidence[node] = True
        for child, ps in bn.parents.items():
            if node in ps:
                evidence[child] = True
    steps = sorted(
        (tid for tid, n in bn.transition_ids.items() if not bn.silent[n]),
        key=lambda tid: tid,
    )
    needed = set(bn.transition_ids[t] for t in steps)
    for t in steps:
        if t not in fired:
            needed.update(bn.parents[bn.transition_ids[t]])
    post = bn.posteriors(sorted(needed), evidence)
    ranking = sorted(
        (RankedStep(t, bn.labels[bn.transition_ids[t]], post[bn.transition_ids[t]], bn.risk[bn.transition_ids[t]])
         for t in steps),
        key=lambda r: (-r.posterior, r.transition_id),
    )
    best = None
    for r in ranking:
        if r.transition_id in fired:
            continue
        if all(post[p] >= threshold for p in bn.parents[bn.transition_ids[r.transition_id]]):
            best = r
            break
    display = None
    if best is not None:
        display = best.risk if bn.pinned[bn.transition_ids[best.transition_id]] else best.posterior
    return Prediction(ranking, best, display, list(fired))
