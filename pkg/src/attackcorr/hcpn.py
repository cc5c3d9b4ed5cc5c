"""Hidden colored Petri nets derived from attack graphs.

Places are security conditions, transitions are attack steps.  Transitions
are hidden; what the defender sees are observation nodes attached to them,
each with an emission (true-positive) probability.  A single noise
transition absorbs benign alerts at the false-positive rate.

Markings are monotone: firing marks the outputs and never clears inputs.
Transitions built from silent rules (reachability bookkeeping) fire
implicitly whenever enabled; see :meth:`HcpnModel.closure`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .attack_graph import DERIVED, FACT, RULE, AttackGraph
from .errors import UnassessedGraph
from .knowledge_graph import KnowledgeGraph, NodeKind, Relation

DEFAULT_TP_RATE = 0.9
DEFAULT_FP_RATE = 0.05
NOISE_ID = "t_noise"


@dataclass(frozen=True)
class Place:
    id: str
    label: str
    marked: bool = False


@dataclass(frozen=True)
class Transition:
    id: str
    label: str
    risk: float
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    silent: bool = False
    rule_label: str | None = None
    signature: str | None = None
    subjects: tuple[str, ...] = ()
    ag_node: int | None = None


@dataclass(frozen=True)
class ObservationNode:
    id: str
    indicator_type: str
    emission: float
    transition: str
    detector: str | None = None
    fp_rate: float = DEFAULT_FP_RATE


@dataclass(frozen=True)
class Arc:
    src: str
    dst: str
    confidence: float


@dataclass(frozen=True)
class DetectorBinding:
    id: str
    name: str
    indicator_types: tuple[str, ...]
    hosts: frozenset[str]
    tp_rate: float = DEFAULT_TP_RATE
    fp_rate: float = DEFAULT_FP_RATE
    witnesses: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def witnesses_step(self, indicator: str, t: Transition, derived: str) -> bool:
        allowed = self.witnesses.get(indicator)
        if allowed is None:
            return True
        return any(w in (t.rule_label, t.signature, derived) for w in allowed)


@dataclass
class HcpnModel:
    places: dict[str, Place]
    transitions: dict[str, Transition]
    observations: dict[str, ObservationNode]
    arcs: list[Arc]
    noise_transition_id: str = NOISE_ID
    source_revision: int | None = None
    fp_rate: float = DEFAULT_FP_RATE
    detector_fp: dict[str, float] = field(default_factory=dict)
    unmapped: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self._closure_cache: dict[frozenset, frozenset] = {}

    @property
    def initial_marking(self) -> frozenset[str]:
        return frozenset(p.id for p in self.places.values() if p.marked)

    @property
    def node_count(self) -> int:
        return len(self.places) + len(self.transitions) + len(self.observations)

    def steps(self) -> list[Transition]:
        """Observable attack steps: neither noise nor silent."""
        return [t for tid, t in sorted(self.transitions.items()) if tid != self.noise_transition_id and not t.silent]

    def enabled(self, tid: str, marking: Iterable[str]) -> bool:
        marking = marking if isinstance(marking, (set, frozenset)) else set(marking)
        t = self.transitions[tid]
        return tid != self.noise_transition_id and all(p in marking for p in t.inputs)

    def fire(self, tid: str, marking: Iterable[str]) -> frozenset[str]:
        marking = frozenset(marking)
        if not self.enabled(tid, marking):
            raise ValueError(f"transition {tid} is not enabled")
        return marking | frozenset(self.transitions[tid].outputs)

    def closure(self, marking: Iterable[str]) -> frozenset[str]:
        """Fire silent transitions until nothing new gets marked."""
        marking = frozenset(marking)
        cached = self._closure_cache.get(marking)
        if cached is not None:
            return cached
        silent = [t for t in self.transitions.values() if t.silent]
        current = set(marking)
        changed = True
        while changed:
            changed = False
            for t in silent:
                if all(p in current for p in t.inputs) and not all(p in current for p in t.outputs):
                    current.update(t.outputs)
                    changed = True
        result = frozenset(current)
        self._closure_cache[marking] = result
        return result

    def noise_score(self, detector: str | None) -> float:
        return self.detector_fp.get(detector, self.fp_rate) if detector is not None else self.fp_rate


def detector_bindings(kg: KnowledgeGraph, tp_rate: float = DEFAULT_TP_RATE, fp_rate: float = DEFAULT_FP_RATE
                      ) -> list[DetectorBinding]:
    bindings = []
    for det in kg.of_kind(NodeKind.DETECTOR):
        hosts: set[str] = set()
        for target in kg.successors(det.id, Relation.MONITORS):
            if kg.nodes[target].kind == NodeKind.HOST:
                hosts.add(target)
            else:
                for ip in kg.predecessors(target, Relation.MEMBER_OF):
                    hosts.update(kg.successors(ip, Relation.ASSIGNED_TO))
        a = det.attributes
        witnesses = {k: tuple(v if isinstance(v, list) else [v]) for k, v in (a.get("witnesses") or {}).items()}
        bindings.append(
            DetectorBinding(
                det.id, str(a["name"]), tuple(a["indicator_types"]), frozenset(hosts),
                float(a.get("tp_rate", tp_rate)), float(a.get("fp_rate", fp_rate)), witnesses,
            )
        )
    return bindings


def build_hcpn(
    ag: AttackGraph,
    detectors: Sequence[DetectorBinding] | KnowledgeGraph = (),
    hosts: Iterable[str] | None = None,
    fp_rate: float = DEFAULT_FP_RATE,
    tp_rate: float = DEFAULT_TP_RATE,
) -> HcpnModel:
    """Convert a risk-assessed attack graph into an HCPN.

    ``detectors`` is either a list of bindings or a knowledge graph to read
    them from; in the latter case ``hosts`` defaults to the graph's hosts.
    """
    revision = None
    if isinstance(detectors, KnowledgeGraph):
        kg = detectors
        revision = kg.revision
        if hosts is None:
            hosts = [n.id for n in kg.of_kind(NodeKind.HOST)]
        detectors = detector_bindings(kg, tp_rate, fp_rate)
    if not ag.is_assessed():
        raise UnassessedGraph("attack graph must be risk-assessed before HCPN conversion")
    host_set = set(hosts or ())

    places: dict[str, Place] = {}
    transitions: dict[str, Transition] = {}
    arcs: list[Arc] = []
    for node in ag.of_kind(FACT) + ag.of_kind(DERIVED):
        pid = f"p{node.id:04d}"
        places[pid] = Place(pid, node.label, marked=node.kind == FACT)
    derived_of: dict[str, str] = {}
    for node in ag.of_kind(RULE):
        tid = f"t{node.id:04d}"
        inputs = tuple(f"p{p:04d}" for p in ag.preds(node.id))
        outputs = tuple(f"p{s:04d}" for s in ag.succs(node.id))
        conclusion = ag.nodes[ag.succs(node.id)[0]].fact
        premise_facts = [ag.nodes[p].fact for p in ag.preds(node.id)]
        subjects = [a for a in conclusion.args if a in host_set]
        if not subjects:
            subjects = sorted({a for f in premise_facts for a in f.args if a in host_set})
        transitions[tid] = Transition(
            tid, node.label, float(node.risk), inputs, outputs, node.silent, node.rule_label,
            node.signature, tuple(subjects), node.id,
        )
        derived_of[tid] = str(conclusion)
        arcs.extend(Arc(p, tid, float(node.local_probability)) for p in inputs)
        arcs.extend(Arc(tid, p, 1.0) for p in outputs)
    transitions[NOISE_ID] = Transition(NOISE_ID, "noise", 1.0, (), (), rule_label=None)

    observations: dict[str, ObservationNode] = {}
    seen: set[tuple[str, str]] = set()
    for det in detectors:
        for indicator in det.indicator_types:
            for t in transitions.values():
                if t.id == NOISE_ID or t.silent or not det.hosts.intersection(t.subjects):
                    continue
                if not det.witnesses_step(indicator, t, derived_of[t.id]):
                    continue
                oid = f"o{len(observations):04d}"
                observations[oid] = ObservationNode(oid, indicator, det.tp_rate, t.id, det.id, det.fp_rate)
                arcs.append(Arc(t.id, oid, det.tp_rate))
                arcs.append(Arc(NOISE_ID, oid, det.fp_rate))
                seen.add((det.id, indicator))
    unmapped = [(d.id, i) for d in detectors for i in d.indicator_types if (d.id, i) not in seen]
    return HcpnModel(
        places, transitions, observations, arcs, NOISE_ID, revision, fp_rate,
        {d.id: d.fp_rate for d in detectors} | {d.name: d.fp_rate for d in detectors}, unmapped,
    )


def export_document(model: HcpnModel) -> dict[str, Any]:
    return {
        "places": [{"id": p.id, "label": p.label, "marked": p.marked} for p in sorted(model.places.values(), key=lambda p: p.id)],
        "transitions": [
            {
                "id": t.id, "label": t.label, "risk": t.risk, "inputs": list(t.inputs), "outputs": list(t.outputs),
                "silent": t.silent, "subjects": list(t.subjects),
            }
            for t in sorted(model.transitions.values(), key=lambda t: t.id)
        ],
        "observations": [
            {"id": o.id, "indicator_type": o.indicator_type, "emission": o.emission, "transition": o.transition,
             "detector": o.detector}
            for o in sorted(model.observations.values(), key=lambda o: o.id)
        ],
        "arcs": [[a.src, a.dst, a.confidence] for a in model.arcs],
        "initial_marking": sorted(model.initial_marking),
        "noise_transition": model.noise_transition_id,
        "unmapped_indicators": [list(u) for u in model.unmapped],
    }
