"""Translate a knowledge graph into ground Datalog facts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import SchemaError
from .knowledge_graph import KnowledgeGraph, NodeKind as K, Relation as R, validate_schema

# predicate -> arity
VOCABULARY: dict[str, int] = {
    "attacker_located": 1,
    "in_zone": 2,
    "network_service": 5,
    "flow_allowed": 4,
    "vuln_exists": 5,
    "has_account": 3,
    "stores_data": 2,
    "mission_depends": 2,
    "can_control": 2,
}

ANY = ("any", "*")


@dataclass(frozen=True, order=True)
class Fact:
    predicate: str
    args: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.predicate}({','.join(self.args)})"

    @classmethod
    def parse(cls, text: str) -> "Fact":
        text = text.strip()
        name, _, rest = text.partition("(")
        if not rest.endswith(")"):
            raise ValueError(f"not a fact: {text!r}")
        body = rest[:-1].strip()
        args = tuple(a.strip() for a in body.split(",")) if body else ()
        return cls(name.strip(), args)


def fact(predicate: str, *args: object) -> Fact:
    return Fact(predicate, tuple(str(a) for a in args))


@dataclass(frozen=True)
class FactBase:
    facts: frozenset[Fact]
    source_revision: int

    def __len__(self) -> int:
        return len(self.facts)

    def __iter__(self):
        return iter(sorted(self.facts))

    def __contains__(self, item: object) -> bool:
        return item in self.facts

    def dump(self) -> str:
        return "".join(f"{f}\n" for f in sorted(str(f) for f in self.facts))


def extract_facts(kg: KnowledgeGraph) -> FactBase:
    violations = validate_schema(kg)
    if violations:
        raise SchemaError("; ".join(v.message for v in violations))
    out: set[Fact] = set()
    attacker = kg.meta.get("attacker") or {}
    if attacker.get("location"):
        out.add(fact("attacker_located", attacker["location"]))

    zones: dict[str, set[str]] = {}
    for ip in kg.of_kind(K.IP_ADDRESS):
        for host in kg.successors(ip.id, R.ASSIGNED_TO):
            for net in kg.successors(ip.id, R.MEMBER_OF):
                out.add(fact("in_zone", host, net))
                zones.setdefault(net, set()).add(host)

    services: dict[str, set[tuple[str, str]]] = {}  # host -> {(protocol, port)}
    for host in kg.of_kind(K.HOST):
        for sw_id in _effective_software(kg, host.id):
            sw = kg.nodes[sw_id]
            privilege = sw.attributes.get("privilege", "user")
            for port_id in kg.successors(sw_id, R.LISTENS_ON):
                port = kg.nodes[port_id].attributes
                out.add(fact("network_service", host.id, sw_id, port["protocol"], port["port_number"], privilege))
                services.setdefault(host.id, set()).add((str(port["protocol"]), str(port["port_number"])))
            for vuln_id in kg.successors(sw_id, R.HAS_VULNERABILITY):
                v = kg.nodes[vuln_id].attributes
                out.add(fact("vuln_exists", host.id, vuln_id, sw_id, v["locality"], v["effect"]))
        for acc_id in kg.successors(host.id, R.HAS_ACCOUNT):
            out.add(fact("has_account", host.id, acc_id, kg.nodes[acc_id].attributes["privilege"]))
        for data in kg.successors(host.id, R.STORES):
            out.add(fact("stores_data", host.id, data))
        for mission in kg.successors(host.id, R.PROVIDES):
            out.add(fact("can_control", host.id, mission))
    for mission in kg.of_kind(K.MISSION):
        for data in kg.successors(mission.id, R.DEPENDS_ON):
            out.add(fact("mission_depends", mission.id, data))

    rules = sorted(
        (n for n in kg.of_kind(K.FIREWALL_RULE)),
        key=lambda n: (float(n.attributes["order"]), n.id),
    )
    networks = [n.id for n in kg.of_kind(K.NETWORK)]
    for dst in networks:
        ports = sorted({svc for host in zones.get(dst, ()) for svc in services.get(host, ())})
        for src in networks:
            for protocol, port in ports:
                if flow_permitted(rules, src, dst, protocol, port):
                    out.add(fact("flow_allowed", src, dst, protocol, port))
    return FactBase(frozenset(out), kg.revision)


def _effective_software(kg: KnowledgeGraph, host_id: str) -> list[str]:
    """Software run by the host plus everything it transitively uses."""
    seen: list[str] = []
    stack = list(reversed(kg.successors(host_id, R.RUNS)))
    while stack:
        sw = stack.pop()
        if sw in seen:
            continue
        seen.append(sw)
        stack.extend(reversed(kg.successors(sw, R.USES)))
    return seen


def flow_permitted(rules: Iterable, src: str, dst: str, protocol: str, port: str) -> bool:
    """First matching rule in ascending order decides; without a match only
    intra-network traffic passes."""
    for rule in rules:
        a = rule.attributes
        if (
            _match(a["src_network"], src)
            and _match(a["dst_network"], dst)
            and _match(a["protocol"], protocol)
            and _match(a["dst_port"], port)
        ):
            return a["action"] == "allow"
    return src == dst


def _match(pattern: object, value: str) -> bool:
    return str(pattern) in ANY or str(pattern) == value


def check_vocabulary(facts: Iterable[Fact]) -> list[str]:
    problems = []
    for f in facts:
        if f.predicate not in VOCABULARY:
            problems.append(f"unknown predicate {f.predicate}")
        elif len(f.args) != VOCABULARY[f.predicate]:
            problems.append(f"{f} has arity {len(f.args)}, expected {VOCABULARY[f.predicate]}")
    return problems
