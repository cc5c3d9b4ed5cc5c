"""End-to-end wiring: scenario to correlation report.

:func:`prepare` builds the static model (knowledge graph, facts, attack
graph, HCPN, Bayesian network) once; :meth:`PreparedModel.report` then
correlates an alert stream against it.  :func:`run_pipeline` does both.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from .attack_graph import AttackGraph, assess_risk, build_attack_graph
from .correlator import (
    DEFAULT_MISS_PENALTY,
    AlertEvent,
    CorrelationResult,
    chain_structure,
    correlate,
    map_alerts,
    parse_alerts,
)
from .datalog import evaluate, load_rules, with_probabilities
from .errors import AttackCorrError, InputError
from .facts import FactBase, extract_facts
from .hcpn import DEFAULT_FP_RATE, DEFAULT_TP_RATE, HcpnModel, build_hcpn
from .knowledge_graph import KnowledgeGraph, NodeKind, add_observation, load_scenario
from .predictor import DEFAULT_THRESHOLD, BayesNet, Prediction, build_bn, predict_next

PHASES = ("kb_population", "attack_graph_generation", "correlation", "report")


def bundled(name: str) -> Path:
    return Path(str(resources.files("attackcorr") / "data" / name))


@dataclass
class RunConfig:
    scenario: str | Path = field(default_factory=lambda: bundled("case_study.yaml"))
    rules: str | Path | None = None
    alerts: str | Path | None = None
    listen: int | None = None
    format: str = "text"
    pin_risks: bool = True
    fp_rate: float = DEFAULT_FP_RATE
    tp_rate: float = DEFAULT_TP_RATE
    miss_penalty: float = DEFAULT_MISS_PENALTY
    threshold: float = DEFAULT_THRESHOLD
    timings: bool = True

    def check(self) -> None:
        if (self.alerts is None) == (self.listen is None):
            raise InputError("exactly one alert source is required: an alerts file or a listen port")
        if self.format not in ("text", "machine"):
            raise InputError(f"unknown report format {self.format!r}")
        for name in ("fp_rate", "tp_rate", "miss_penalty", "threshold"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0 and not (name == "threshold" and value == 0.0):
                raise InputError(f"{name} must lie in (0, 1], got {value}")


@dataclass(frozen=True)
class ReportRow:
    transition_id: str
    label: str
    pr: float
    fired: bool
    predicted: bool
    posterior: float


@dataclass
class CorrelationReport:
    rows: list[ReportRow]
    timings: dict[str, float]
    model_counts: dict[str, int]
    predicted_next: str | None = None
    display_probability: float | None = None
    log_likelihood: float = 0.0
    noise_assignments: list[int] = field(default_factory=list)

    def to_document(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["rows"] = [asdict(r) for r in self.rows]
        return doc

    @classmethod
    def from_document(cls, doc: dict[str, Any]) -> "CorrelationReport":
        doc = dict(doc)
        doc["rows"] = [ReportRow(**r) for r in doc["rows"]]
        return cls(**doc)


class PhaseError(AttackCorrError):
    """A module error annotated with the pipeline phase it happened in."""

    def __init__(self, phase: str, cause: AttackCorrError):
        super().__init__(f"{phase}: {cause}")
        self.phase = phase
        self.cause = cause
        self.exit_code = cause.exit_code


class _Clock:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.timings = {p: 0.0 for p in PHASES}

    def run(self, phase: str, fn, *args, **kwargs):
        start = time.monotonic()
        try:
            return fn(*args, **kwargs)
        except AttackCorrError as exc:
            raise PhaseError(phase, exc) from exc
        finally:
            if self.enabled:
                self.timings[phase] += (time.monotonic() - start) * 1000.0


@dataclass
class PreparedModel:
    config: RunConfig
    kg: KnowledgeGraph
    facts: FactBase
    ag: AttackGraph
    hcpn: HcpnModel
    bn: BayesNet
    kb_nodes: int
    row_order: list[str]
    setup_timings: dict[str, float]

    def report(self, alerts: Sequence[AlertEvent]) -> CorrelationReport:
        clock = _Clock(self.config.timings)
        clock.timings.update(self.setup_timings)
        kg = copy.deepcopy(self.kg)
        result = clock.run("correlation", self._correlate, kg, alerts)
        prediction = clock.run("report", predict_next, self.bn, result, self.config.threshold)
        return clock.run("report", self._assemble, result, prediction, clock.timings)

    def _correlate(self, kg: KnowledgeGraph, alerts: Sequence[AlertEvent]) -> CorrelationResult:
        observations = map_alerts(kg, self.hcpn, alerts)
        for obs in observations:
            subject = _subject_node(kg, obs.alert.subject)
            if subject is not None:
                a = obs.alert
                add_observation(kg, a.detector_name, a.indicator_type, subject, a.timestamp, **dict(a.attributes))
        return correlate(self.hcpn, observations, self.config.miss_penalty)

    def _assemble(self, result: CorrelationResult, prediction: Prediction, timings) -> CorrelationReport:
        fired = set(result.fired_ids)
        posterior = {r.transition_id: r.posterior for r in prediction.ranking}
        chosen = prediction.predicted_next.transition_id if prediction.predicted_next else None
        rows = [
            ReportRow(tid, self.hcpn.transitions[tid].label, self.hcpn.transitions[tid].risk, tid in fired,
                      tid == chosen, posterior[tid])
            for tid in self.row_order
        ]
        return CorrelationReport(
            rows,
            {p: round(timings[p], 3) for p in PHASES},
            {"kb_nodes": self.kb_nodes, "facts": len(self.facts.facts), "hcpn_nodes": self.hcpn.node_count},
            prediction.predicted_next.label if prediction.predicted_next else None,
            prediction.display_probability,
            result.log_likelihood,
            list(result.noise_assignments),
        )


def _subject_node(kg: KnowledgeGraph, subject: str) -> str | None:
    node = kg.nodes.get(subject)
    if node is not None and node.kind in (NodeKind.HOST, NodeKind.IP_ADDRESS):
        return subject
    for ip in kg.of_kind(NodeKind.IP_ADDRESS):
        if str(ip.attributes.get("address")) == subject:
            return ip.id
    return None


def _vuln_scores(kg: KnowledgeGraph) -> dict[str, float]:
    return {n.id: float(n.attributes["cvss_base_score"]) for n in kg.of_kind(NodeKind.VULNERABILITY)}


def _row_order(model: HcpnModel) -> list[str]:
    """Steps by depth along the attack path, then by id."""
    order, _, preds = chain_structure(model)
    depth: dict[str, int] = {}
    for t in order:
        depth[t] = 1 + max((depth[u] for u in preds[t]), default=-1)
    return sorted(order, key=lambda t: (depth[t], t))


def prepare(config: RunConfig) -> PreparedModel:
    clock = _Clock(config.timings)
    kg = clock.run("kb_population", load_scenario, config.scenario)
    kb_nodes = len(kg.nodes)

    def generate():
        rules = load_rules(config.rules)
        rules = with_probabilities(rules, kg.meta.get("local_probabilities") or {})
        facts = extract_facts(kg)
        ev = evaluate(rules, facts)
        ag = build_attack_graph(ev.traces, facts, rules, kg.meta.get("step_labels") or {})
        pins = kg.meta.get("pinned_risk") if config.pin_risks else None
        ag = assess_risk(ag, _vuln_scores(kg), pins)
        model = build_hcpn(ag, kg, fp_rate=config.fp_rate, tp_rate=config.tp_rate)
        return facts, ag, model, build_bn(ag), _row_order(model)

    facts, ag, model, bn, rows = clock.run("attack_graph_generation", generate)
    return PreparedModel(config, kg, facts, ag, model, bn, kb_nodes, rows, dict(clock.timings))


def read_alerts(path: str | Path) -> list[AlertEvent]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read alerts file {path}: {exc.strerror}") from None
    return parse_alerts(text)


def run_pipeline(config: RunConfig) -> CorrelationReport:
    config.check()
    if config.alerts is None:
        raise InputError("run_pipeline needs an alerts file; use the serve command for a listen port")
    try:
        alerts = read_alerts(config.alerts)
    except AttackCorrError as exc:
        raise PhaseError("correlation", exc) from exc
    return prepare(config).report(alerts)


def render_report(report: CorrelationReport, fmt: str = "text") -> str:
    if fmt == "machine":
        return json.dumps(report.to_document(), indent=2, sort_keys=True) + "\n"
    if fmt != "text":
        raise InputError(f"unknown report format {fmt!r}")
    header = ("Attack Step", "Pr", "A_a", "A_p")
    body = [(r.label, f"{r.pr:.2f}", "X" if r.fired else "", "X" if r.predicted else "") for r in report.rows]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(4)]

    def line(cells) -> str:
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [line(header), "-+-".join("-" * w for w in widths)]
    out += [line(row) for row in body]
    return "\n".join(out) + "\n"


def parse_machine_report(text: str) -> CorrelationReport:
    return CorrelationReport.from_document(json.loads(text))
