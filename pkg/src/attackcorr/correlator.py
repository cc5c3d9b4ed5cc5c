"""Alert-to-model binding and most-likely attack sequence decoding.

A hypothesis is a sequence of fired attack steps together with an
assignment of every observation either to one fired step or to the noise
transition.  Its log score is::

    sum(log risk(t) for fired t)
  + sum(log emission(o, t) for o assigned to t)
  + sum(log fp_rate(o) for o assigned to noise)
  + sum(log miss_penalty for fired t without any observation)

Sequences follow the attack path: the first step must be enabled by the
initial marking (closed under silent transitions) and each later step must
be enabled by the marking its predecessor produces and must consume at
least one condition that predecessor newly established.  Observations are
assigned in order; an observation may support the most recent step or a
later one, never an earlier one.

:func:`correlate` solves this with a Viterbi-style table over
(last step, supported?) in O(m^2 n); :func:`brute_force_correlate`
enumerates sequences and assignments outright and serves as its oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import CyclicGraph, ModelMismatch, ParseError, TooLarge
from .hcpn import HcpnModel
from .knowledge_graph import KnowledgeGraph

DEFAULT_MISS_PENALTY = 0.3
EPS = 1e-12
BRUTE_FORCE_MAX_STEPS = 12
BRUTE_FORCE_MAX_OBSERVATIONS = 8


@dataclass(frozen=True)
class AlertEvent:
    timestamp: int
    detector_name: str
    indicator_type: str
    subject: str
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("alert timestamp must be non-negative")
        if not self.detector_name or not self.indicator_type:
            raise ValueError("alert needs a detector and an indicator type")

    def to_line(self) -> str:
        attrs = ",".join(f"{k}={v}" for k, v in sorted(self.attributes.items()))
        return f"{self.timestamp}|{self.detector_name}|{self.indicator_type}|{self.subject}|{attrs}"


def parse_alert(line: str) -> AlertEvent:
    parts = line.strip().split("|")
    if len(parts) not in (4, 5):
        raise ParseError(f"alert record needs 4 or 5 '|'-separated fields: {line.strip()!r}")
    try:
        ts = int(parts[0])
    except ValueError:
        raise ParseError(f"alert timestamp is not an integer: {parts[0]!r}") from None
    attrs = {}
    if len(parts) == 5 and parts[4].strip():
        for item in parts[4].split(","):
            key, sep, value = item.partition("=")
            if not sep:
                raise ParseError(f"alert attribute without '=': {item!r}")
            attrs[key.strip()] = value.strip()
    try:
        return AlertEvent(ts, parts[1].strip(), parts[2].strip(), parts[3].strip(), attrs)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def parse_alerts(text: str) -> list[AlertEvent]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            out.append(parse_alert(line))
        except ParseError as exc:
            raise ParseError(str(exc), lineno) from None
    return out


@dataclass(frozen=True)
class ObservationInstance:
    alert: AlertEvent
    candidate_nodes: tuple[str, ...]
    order_index: int


def map_alerts(kg: KnowledgeGraph | None, model: HcpnModel, alerts: Iterable[AlertEvent]
               ) -> list[ObservationInstance]:
    """Bind alerts to observation nodes, ordered by timestamp then arrival.

    With ``kg=None`` subjects are compared to transition subjects verbatim
    and detectors are not checked.
    """
    ordered = sorted(enumerate(alerts), key=lambda pair: (pair[1].timestamp, pair[0]))
    out = []
    for index, (_, alert) in enumerate(ordered):
        if kg is not None:
            kg.find_detector(alert.detector_name)
            hosts = set(kg.hosts_of(alert.subject))
        else:
            hosts = {alert.subject}
        cands = tuple(
            o.id for o in sorted(model.observations.values(), key=lambda o: o.id)
            if o.indicator_type == alert.indicator_type and hosts.intersection(model.transitions[o.transition].subjects)
        )
        out.append(ObservationInstance(alert, cands, index))
    return out


@dataclass(frozen=True)
class Step:
    transition_id: str
    label: str
    risk: float
    fired: bool
    supports: tuple[int, ...]


@dataclass
class CorrelationResult:
    steps: list[Step]
    noise_assignments: list[int]
    log_likelihood: float
    operations: int = 0

    @property
    def fired_ids(self) -> list[str]:
        return [s.transition_id for s in self.steps if s.fired]


def _log(p: float) -> float:
    return math.log(p) if p > 0 else -math.inf


def _emissions(model: HcpnModel, obs: ObservationInstance) -> dict[str, float]:
    out: dict[str, float] = {}
    for node_id in obs.candidate_nodes:
        node = model.observations.get(node_id)
        if node is None:
            raise ModelMismatch(f"observation {obs.order_index} references unknown node {node_id!r}")
        if model.transitions[node.transition].silent:
            continue
        out[node.transition] = max(out.get(node.transition, 0.0), node.emission)
    return out


class _Hyp(NamedTuple):
    score: float
    risk: float
    ids: tuple[str, ...]
    steps: tuple[tuple[str, tuple[int, ...]], ...]
    noise: tuple[int, ...]


def _better(a: _Hyp, b: _Hyp | None) -> bool:
    if b is None:
        return True
    if a.score > b.score + EPS:
        return True
    if a.score < b.score - EPS:
        return False
    if a.risk > b.risk + EPS:
        return True
    if a.risk < b.risk - EPS:
        return False
    return a.ids < b.ids


def _result(model: HcpnModel, best: _Hyp, ops: int) -> CorrelationResult:
    steps = [
        Step(tid, model.transitions[tid].label, model.transitions[tid].risk, True, supports)
        for tid, supports in best.steps
    ]
    return CorrelationResult(steps, list(best.noise), best.score, ops)


def chain_structure(model: HcpnModel) -> tuple[list[str], dict[str, bool], dict[str, list[str]]]:
    """Steps in topological order, which may start a path, and allowed predecessors."""
    steps = [t.id for t in model.steps()]
    m0 = model.closure(model.initial_marking)
    after = {t: model.closure(m0 | set(model.transitions[t].outputs)) for t in steps}
    start = {t: set(model.transitions[t].inputs) <= m0 for t in steps}
    preds: dict[str, list[str]] = {}
    for t in steps:
        need = set(model.transitions[t].inputs)
        preds[t] = [u for u in steps if need <= after[u] and need & (after[u] - m0)]
    # steps no path can reach never fire; dropping them keeps dead cycles harmless
    live = {t for t in steps if start[t]}
    frontier = list(live)
    while frontier:
        u = frontier.pop()
        for t in steps:
            if t not in live and u in preds[t]:
                live.add(t)
                frontier.append(t)
    steps = [t for t in steps if t in live]
    preds = {t: [u for u in preds[t] if u in live] for t in steps}
    start = {t: start[t] for t in steps}
    order, state = [], {}

    def visit(t: str) -> None:
        if state.get(t) == 1:
            raise CyclicGraph(f"attack steps form a cycle through {t}")
        if state.get(t) == 2:
            return
        state[t] = 1
        for u in preds[t]:
            visit(u)
        state[t] = 2
        order.append(t)

    for t in steps:
        visit(t)
    return order, start, preds


def correlate(
    model: HcpnModel,
    observations: Sequence[ObservationInstance],
    miss_penalty: float = DEFAULT_MISS_PENALTY,
) -> CorrelationResult:
    order, start_ok, preds = chain_structure(model)
    log_miss = _log(miss_penalty)
    log_risk = {t: _log(model.transitions[t].risk) for t in order}
    risk = {t: model.transitions[t].risk for t in order}
    START = None
    cells: dict = {START: _Hyp(0.0, 0.0, (), (), ())}
    ops = 0
    for obs in observations:
        j = obs.order_index
        ems = _emissions(model, obs)
        # gap relaxation: fire steps without support, in topological order
        for t in order:
            best = cells.get((t, False))
            sources = []
            ops += 1
            if start_ok[t] and START in cells:
                sources.append((cells[START], 0.0))
            for u in preds[t]:
                ops += 1
                if (u, True) in cells:
                    sources.append((cells[(u, True)], 0.0))
                if (u, False) in cells:
                    sources.append((cells[(u, False)], log_miss))
            for src, extra in sources:
                cand = _Hyp(src.score + extra + log_risk[t], src.risk + risk[t], src.ids + (t,),
                            src.steps + ((t, ()),), src.noise)
                if _better(cand, best):
                    best = cand
            if best is not None and best.score > -math.inf:
                cells[(t, False)] = best
        # emission
        log_fp = _log(model.noise_score(obs.alert.detector_name))
        new: dict = {}
        for state, h in cells.items():
            ops += 1
            new[state] = h._replace(score=h.score + log_fp, noise=h.noise + (j,))
        for t, em in ems.items():
            if t not in log_risk:
                continue
            for supported in (True, False):
                h = cells.get((t, supported))
                ops += 1
                if h is None:
                    continue
                tid, sup = h.steps[-1]
                cand = h._replace(score=h.score + _log(em), steps=h.steps[:-1] + ((tid, sup + (j,)),))
                if _better(cand, new.get((t, True))):
                    new[(t, True)] = cand
        cells = new
    final = None
    for state, h in cells.items():
        if state is not START and not state[1]:
            h = h._replace(score=h.score + log_miss)
        if _better(h, final):
            final = h
    return _result(model, final, ops)


def brute_force_correlate(
    model: HcpnModel,
    observations: Sequence[ObservationInstance],
    max_len: int | None = None,
    miss_penalty: float = DEFAULT_MISS_PENALTY,
) -> CorrelationResult:
    """Exhaustive maximum of the same score; for verification only."""
    steps = [t for tid, t in sorted(model.transitions.items()) if tid != model.noise_transition_id and not t.silent]
    if len(steps) > BRUTE_FORCE_MAX_STEPS or len(observations) > BRUTE_FORCE_MAX_OBSERVATIONS:
        raise TooLarge(f"brute force limited to {BRUTE_FORCE_MAX_STEPS} steps and "
                       f"{BRUTE_FORCE_MAX_OBSERVATIONS} observations")
    max_len = len(steps) if max_len is None else max_len
    silent = [t for t in model.transitions.values() if t.silent]

    def saturate(marking: set[str]) -> set[str]:
        marking = set(marking)
        while True:
            fresh = set()
            for t in silent:
                if set(t.inputs) <= marking:
                    fresh |= set(t.outputs) - marking
            if not fresh:
                return marking
            marking |= fresh

    m0 = saturate({p.id for p in model.places.values() if p.marked})
    ems = [_emissions(model, o) for o in observations]
    fps = [math.log(model.noise_score(o.alert.detector_name)) for o in observations]
    log_miss = _log(miss_penalty)
    best: list[_Hyp | None] = [None]

    def score_sequence(seq: list) -> None:
        k = len(seq)
        base = sum(_log(t.risk) for t in seq)
        risk = sum(t.risk for t in seq)
        ids = tuple(t.id for t in seq)
        support: list[list[int]] = [[] for _ in seq]
        noise: list[int] = []

        def assign(j: int, pos: int, acc: float) -> None:
            if j == len(observations):
                unsupported = sum(1 for s in support if not s)
                total = acc + base + unsupported * log_miss
                hyp = _Hyp(total, risk, ids, tuple((ids[i], tuple(support[i])) for i in range(k)), tuple(noise))
                if _better(hyp, best[0]):
                    best[0] = hyp
                return
            idx = observations[j].order_index
            noise.append(idx)
            assign(j + 1, pos, acc + fps[j])
            noise.pop()
            for p in range(pos, k):
                em = ems[j].get(seq[p].id)
                if em is None:
                    continue
                support[p].append(idx)
                assign(j + 1, p, acc + _log(em))
                support[p].pop()

        assign(0, 0, 0.0)

    def extend(seq: list, marking: set[str]) -> None:
        score_sequence(seq)
        if len(seq) == max_len:
            return
        for t in steps:
            need = set(t.inputs)
            if not need <= marking:
                continue
            if seq and not need & (marking - m0):
                continue
            extend(seq + [t], saturate(m0 | set(t.outputs)))

    extend([], m0)
    return _result(model, best[0], 0)
