"""In-memory typed property graph for infrastructure, threat and observation data.

The graph follows a layered ontology: network (networks, addresses,
routers), authorization (firewalls and their rules, accounts, principals),
host (hosts, software, ports), vulnerability, mission (functions and the
data they depend on) and detection (detectors and their observations).

Scenarios are loaded from a YAML document.  Two shapes are accepted: the
hand-written *scenario* shape with one section per entity family, and the
flat *snapshot* shape produced by :func:`export_snapshot`.
"""

from __future__ import annotations

import copy
import ipaddress
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from .errors import ParseError, SchemaError, UnknownDetector, UnknownKind, UnknownRelation, UnknownSubject


class NodeKind(str, Enum):
    NETWORK = "Network"
    IP_ADDRESS = "IpAddress"
    ROUTER = "Router"
    FIREWALL = "Firewall"
    FIREWALL_RULE = "FirewallRule"
    HOST = "Host"
    SOFTWARE = "SoftwareResource"
    PORT = "Port"
    USER_ACCOUNT = "UserAccount"
    PRINCIPAL = "Principal"
    VULNERABILITY = "Vulnerability"
    MISSION = "MissionFunction"
    DATA_ASSET = "DataAsset"
    DETECTOR = "Detector"
    OBSERVATION = "Observation"


class Relation(str, Enum):
    MEMBER_OF = "member_of"
    ASSIGNED_TO = "assigned_to"
    ROUTES = "routes"
    HAS_RULE = "has_rule"
    RUNS = "runs"
    USES = "uses"
    LISTENS_ON = "listens_on"
    HAS_VULNERABILITY = "has_vulnerability"
    HAS_ACCOUNT = "has_account"
    HAS_PRINCIPAL = "has_principal"
    PROVIDES = "provides"
    DEPENDS_ON = "depends_on"
    STORES = "stores"
    MONITORS = "monitors"
    OBSERVED_BY = "observed_by"
    CONCERNS = "concerns"


K = NodeKind
R = Relation

# relation -> (allowed source kinds, allowed target kinds)
EDGE_RULES: dict[Relation, tuple[frozenset[NodeKind], frozenset[NodeKind]]] = {
    R.MEMBER_OF: (frozenset({K.IP_ADDRESS}), frozenset({K.NETWORK})),
    R.ASSIGNED_TO: (frozenset({K.IP_ADDRESS}), frozenset({K.HOST})),
    R.ROUTES: (frozenset({K.ROUTER}), frozenset({K.NETWORK})),
    R.HAS_RULE: (frozenset({K.FIREWALL}), frozenset({K.FIREWALL_RULE})),
    R.RUNS: (frozenset({K.HOST}), frozenset({K.SOFTWARE})),
    R.USES: (frozenset({K.SOFTWARE}), frozenset({K.SOFTWARE})),
    R.LISTENS_ON: (frozenset({K.SOFTWARE}), frozenset({K.PORT})),
    R.HAS_VULNERABILITY: (frozenset({K.SOFTWARE}), frozenset({K.VULNERABILITY})),
    R.HAS_ACCOUNT: (frozenset({K.HOST}), frozenset({K.USER_ACCOUNT})),
    R.HAS_PRINCIPAL: (frozenset({K.USER_ACCOUNT}), frozenset({K.PRINCIPAL})),
    R.PROVIDES: (frozenset({K.HOST}), frozenset({K.MISSION})),
    R.DEPENDS_ON: (frozenset({K.MISSION}), frozenset({K.DATA_ASSET})),
    R.STORES: (frozenset({K.HOST}), frozenset({K.DATA_ASSET})),
    R.MONITORS: (frozenset({K.DETECTOR}), frozenset({K.HOST, K.NETWORK})),
    R.OBSERVED_BY: (frozenset({K.OBSERVATION}), frozenset({K.DETECTOR})),
    R.CONCERNS: (frozenset({K.OBSERVATION}), frozenset({K.HOST, K.IP_ADDRESS})),
}

REQUIRED_ATTRIBUTES: dict[NodeKind, tuple[str, ...]] = {
    K.NETWORK: ("name", "cidr"),
    K.IP_ADDRESS: ("address",),
    K.ROUTER: ("name",),
    K.FIREWALL: ("name",),
    K.FIREWALL_RULE: ("action", "src_network", "dst_network", "dst_port", "protocol", "order"),
    K.HOST: ("name",),
    K.SOFTWARE: ("name",),
    K.PORT: ("port_number", "protocol"),
    K.USER_ACCOUNT: ("name", "privilege"),
    K.PRINCIPAL: ("name",),
    K.VULNERABILITY: ("cve_id", "cvss_base_score", "locality", "effect"),
    K.MISSION: ("name",),
    K.DATA_ASSET: ("name",),
    K.DETECTOR: ("name", "indicator_types"),
    K.OBSERVATION: ("indicator_type", "timestamp"),
}

ENUM_ATTRIBUTES: dict[tuple[NodeKind, str], frozenset[str]] = {
    (K.FIREWALL_RULE, "action"): frozenset({"allow", "block"}),
    (K.VULNERABILITY, "locality"): frozenset({"remote", "local"}),
    (K.VULNERABILITY, "effect"): frozenset({"code_exec", "priv_esc", "info_leak", "weak_auth"}),
    (K.USER_ACCOUNT, "privilege"): frozenset({"user", "root"}),
}


@dataclass
class KGNode:
    id: str
    kind: NodeKind
    attributes: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, order=True)
class KGEdge:
    src: str
    relation: Relation
    dst: str


@dataclass(frozen=True)
class Violation:
    code: str  # dangling | kind | missing | range | enum | cardinality
    subject: str
    message: str


class KnowledgeGraph:
    """Typed property graph with a revision counter bumped on every mutation.

    ``meta`` carries scenario-level settings that are not graph entities:
    the attacker's initial zone, pinned risks, local rule probabilities and
    display labels for attack steps.
    """

    def __init__(self) -> None:
        self.nodes: dict[str, KGNode] = {}
        self.edges: set[KGEdge] = set()
        self.revision = 0
        self.meta: dict[str, Any] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    # mutations

    def add_node(self, node_id: str, kind: NodeKind | str, **attributes: Any) -> KGNode:
        if node_id in self.nodes:
            raise SchemaError(f"duplicate node id {node_id!r}")
        node = KGNode(str(node_id), _kind(kind), dict(attributes))
        self.nodes[node.id] = node
        self.revision += 1
        return node

    def add_edge(self, src: str, relation: Relation | str, dst: str) -> KGEdge:
        edge = KGEdge(src, _relation(relation), dst)
        for end in (src, dst):
            if end not in self.nodes:
                raise SchemaError(f"edge {src} -{edge.relation.value}-> {dst} references unknown node {end!r}")
        self.edges.add(edge)
        self.revision += 1
        return edge

    def remove_node(self, node_id: str, cascade: bool = True) -> None:
        """Delete a node; with ``cascade=False`` incident edges are left dangling."""
        del self.nodes[node_id]
        if cascade:
            self.edges = {e for e in self.edges if node_id not in (e.src, e.dst)}
        self.revision += 1

    # reads

    def out_edges(self, node_id: str, relation: Relation | None = None) -> list[KGEdge]:
        return sorted(e for e in self.edges if e.src == node_id and (relation is None or e.relation == relation))

    def in_edges(self, node_id: str, relation: Relation | None = None) -> list[KGEdge]:
        return sorted(e for e in self.edges if e.dst == node_id and (relation is None or e.relation == relation))

    def successors(self, node_id: str, relation: Relation) -> list[str]:
        return [e.dst for e in self.out_edges(node_id, relation)]

    def predecessors(self, node_id: str, relation: Relation) -> list[str]:
        return [e.src for e in self.in_edges(node_id, relation)]

    def of_kind(self, kind: NodeKind) -> list[KGNode]:
        return [self.nodes[i] for i in sorted(self.nodes) if self.nodes[i].kind == kind]

    def copy(self) -> "KnowledgeGraph":
        """Immutable-by-convention snapshot for concurrent readers."""
        return copy.deepcopy(self)

    def hosts_of(self, subject: str) -> list[str]:
        """Resolve a host id, address node id or literal address to host ids."""
        node = self.nodes.get(subject)
        if node is not None and node.kind == K.HOST:
            return [subject]
        if node is not None and node.kind == K.IP_ADDRESS:
            return self.successors(subject, R.ASSIGNED_TO)
        for ip in self.of_kind(K.IP_ADDRESS):
            if str(ip.attributes.get("address")) == subject:
                return self.successors(ip.id, R.ASSIGNED_TO)
        return []

    def find_detector(self, name: str) -> KGNode:
        node = self.nodes.get(name)
        if node is not None and node.kind == K.DETECTOR:
            return node
        for det in self.of_kind(K.DETECTOR):
            if det.attributes.get("name") == name:
                return det
        raise UnknownDetector(f"detector {name!r} not present in knowledge graph")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges and self.meta == other.meta


def _kind(kind: NodeKind | str) -> NodeKind:
    try:
        return NodeKind(kind)
    except ValueError:
        raise UnknownKind(f"unknown node kind {kind!r}") from None


def _relation(relation: Relation | str) -> Relation:
    try:
        return Relation(relation)
    except ValueError:
        raise UnknownRelation(f"unknown relation {relation!r}") from None


# ---------------------------------------------------------------- validation


def validate_schema(kg: KnowledgeGraph) -> list[Violation]:
    report: list[Violation] = []
    for node_id in sorted(kg.nodes):
        node = kg.nodes[node_id]
        for attr in REQUIRED_ATTRIBUTES[node.kind]:
            if node.attributes.get(attr) is None:
                report.append(Violation("missing", node_id, f"{node.kind.value} {node_id!r} lacks required attribute {attr!r}"))
        for (kind, attr), allowed in ENUM_ATTRIBUTES.items():
            if node.kind == kind and attr in node.attributes and node.attributes[attr] not in allowed:
                report.append(Violation("enum", node_id, f"{attr}={node.attributes[attr]!r} not in {sorted(allowed)}"))
        score = node.attributes.get("cvss_base_score")
        if score is not None and not _in_range(score, 0.0, 10.0):
            report.append(Violation("range", node_id, f"cvss_base_score {score!r} outside [0, 10]"))
        port = node.attributes.get("port_number")
        if node.kind == K.PORT and port is not None and not (_is_int(port) and 0 <= int(port) <= 65535):
            report.append(Violation("range", node_id, f"port_number {port!r} outside [0, 65535]"))
        if node.kind == K.DETECTOR and not isinstance(node.attributes.get("indicator_types", []), list):
            report.append(Violation("kind", node_id, "indicator_types must be a list"))
    for edge in sorted(kg.edges):
        label = f"{edge.src} -{edge.relation.value}-> {edge.dst}"
        missing = [end for end in (edge.src, edge.dst) if end not in kg.nodes]
        if missing:
            report.append(Violation("dangling", label, f"edge {label} references missing node(s) {missing}"))
            continue
        src_kinds, dst_kinds = EDGE_RULES[edge.relation]
        if kg.nodes[edge.src].kind not in src_kinds or kg.nodes[edge.dst].kind not in dst_kinds:
            report.append(
                Violation(
                    "kind",
                    label,
                    f"{edge.relation.value} does not connect {kg.nodes[edge.src].kind.value} to {kg.nodes[edge.dst].kind.value}",
                )
            )
    for obs in kg.of_kind(K.OBSERVATION):
        n = len([e for e in kg.edges if e.src == obs.id and e.relation == R.OBSERVED_BY])
        if n != 1:
            report.append(Violation("cardinality", obs.id, f"observation has {n} observed_by edges, expected 1"))
    return report


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _in_range(value: Any, lo: float, hi: float) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and lo <= value <= hi


# ---------------------------------------------------------------- loading

META_KEYS = ("attacker", "pinned_risk", "local_probabilities", "step_labels")


def load_scenario(source: str | Path | Mapping[str, Any]) -> KnowledgeGraph:
    """Build a validated graph from a scenario or snapshot document.

    ``source`` may be a path, YAML text, or an already-parsed mapping.
    """
    doc = _parse(source)
    kg = KnowledgeGraph()
    if "nodes" in doc or "edges" in doc:
        _load_snapshot(kg, doc)
    else:
        _ScenarioBuilder(kg, doc).build()
    for key in META_KEYS:
        if doc.get(key) is not None:
            kg.meta[key] = copy.deepcopy(doc[key])
    violations = validate_schema(kg)
    if violations:
        raise SchemaError("; ".join(v.message for v in violations))
    return kg


def _parse(source: str | Path | Mapping[str, Any]) -> dict[str, Any]:
    if isinstance(source, Mapping):
        return dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and source.endswith((".yaml", ".yml"))):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ParseError(f"cannot read scenario {source}: {exc}") from exc
    else:
        text = source
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ParseError(f"malformed scenario document: {exc.problem}", mark.line + 1 if mark else None,
                         mark.column + 1 if mark else None) from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed scenario document: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a mapping at top level", 1, 1)
    return doc


def _load_snapshot(kg: KnowledgeGraph, doc: Mapping[str, Any]) -> None:
    for entry in doc.get("nodes") or []:
        _require(entry, ("id", "kind"), "node")
        kg.add_node(entry["id"], entry["kind"], **(entry.get("attributes") or {}))
    for entry in doc.get("edges") or []:
        _require(entry, ("src", "relation", "dst"), "edge")
        kg.add_edge(entry["src"], entry["relation"], entry["dst"])


def _require(entry: Any, keys: Iterable[str], what: str) -> None:
    if not isinstance(entry, Mapping):
        raise SchemaError(f"{what} entry must be a mapping, got {entry!r}")
    for key in keys:
        if key not in entry:
            raise SchemaError(f"{what} entry {entry.get('id', entry)!r} lacks {key!r}")


class _ScenarioBuilder:
    SECTIONS = ("networks", "routers", "firewalls", "software", "vulnerabilities", "data_assets", "missions",
                "hosts", "accounts", "detectors")

    def __init__(self, kg: KnowledgeGraph, doc: Mapping[str, Any]):
        self.kg = kg
        self.doc = doc
        unknown = set(doc) - set(self.SECTIONS) - set(META_KEYS)
        if unknown:
            raise SchemaError(f"unknown scenario section(s): {sorted(unknown)}")

    def section(self, name: str) -> list[Mapping[str, Any]]:
        entries = self.doc.get(name) or []
        if not isinstance(entries, list):
            raise SchemaError(f"section {name!r} must be a list")
        for entry in entries:
            _require(entry, ("id",), name)
        return entries

    def node(self, entry: Mapping[str, Any], kind: NodeKind, structural: Iterable[str] = ()) -> str:
        attrs = {k: v for k, v in entry.items() if k != "id" and k not in structural}
        self.kg.add_node(str(entry["id"]), kind, **attrs)
        return str(entry["id"])

    def edge(self, src: str, relation: Relation, dst: str, owner: str) -> None:
        if dst not in self.kg.nodes:
            raise SchemaError(f"{owner!r}: {relation.value} references unknown entity {dst!r}")
        self.kg.add_edge(src, relation, dst)

    def port(self, spec: Mapping[str, Any]) -> str:
        port_id = str(spec.get("id") or f"port-{spec.get('protocol', 'tcp')}-{spec.get('port_number')}")
        if port_id not in self.kg.nodes:
            self.kg.add_node(port_id, K.PORT, **{k: v for k, v in spec.items() if k != "id"})
        return port_id

    def build(self) -> None:
        kg = self.kg
        for entry in self.section("networks"):
            self.node(entry, K.NETWORK)
        for entry in self.section("routers"):
            rid = self.node(entry, K.ROUTER, ("routes",))
            for net in entry.get("routes") or []:
                self.edge(rid, R.ROUTES, net, rid)
        for entry in self.section("firewalls"):
            fid = self.node(entry, K.FIREWALL, ("rules",))
            for i, rule in enumerate(entry.get("rules") or []):
                rule = dict(rule)
                rule_id = str(rule.pop("id", None) or f"{fid}-rule-{rule.get('order', i)}")
                kg.add_node(rule_id, K.FIREWALL_RULE, **rule)
                kg.add_edge(fid, R.HAS_RULE, rule_id)
        for entry in self.section("software"):
            sid = self.node(entry, K.SOFTWARE, ("ports", "uses"))
            for spec in entry.get("ports") or []:
                kg.add_edge(sid, R.LISTENS_ON, self.port(spec))
        for entry in self.section("software"):
            for used in entry.get("uses") or []:
                self.edge(str(entry["id"]), R.USES, used, str(entry["id"]))
        for entry in self.section("vulnerabilities"):
            vid = self.node(entry, K.VULNERABILITY, ("software",))
            targets = entry.get("software") or []
            for sw in [targets] if isinstance(targets, str) else targets:
                self.edge(sw, R.HAS_VULNERABILITY, vid, vid)
        for entry in self.section("data_assets"):
            self.node(entry, K.DATA_ASSET)
        for entry in self.section("missions"):
            mid = self.node(entry, K.MISSION, ("depends_on",))
            for data in entry.get("depends_on") or []:
                self.edge(mid, R.DEPENDS_ON, data, mid)
        for entry in self.section("hosts"):
            hid = self.node(entry, K.HOST, ("addresses", "runs", "stores", "provides"))
            for addr in entry.get("addresses") or []:
                _require(addr, ("address", "network"), f"address of host {hid}")
                aid = str(addr.get("id") or f"ip-{addr['address']}")
                kg.add_node(aid, K.IP_ADDRESS, **{k: v for k, v in addr.items() if k not in ("id", "network")})
                kg.add_edge(aid, R.ASSIGNED_TO, hid)
                self.edge(aid, R.MEMBER_OF, addr["network"], hid)
                _check_address(addr["address"], kg.nodes[addr["network"]], hid)
            for sw in entry.get("runs") or []:
                self.edge(hid, R.RUNS, sw, hid)
            for data in entry.get("stores") or []:
                self.edge(hid, R.STORES, data, hid)
            for mission in entry.get("provides") or []:
                self.edge(hid, R.PROVIDES, mission, hid)
        for entry in self.section("accounts"):
            _require(entry, ("host",), "account")
            aid = self.node(entry, K.USER_ACCOUNT, ("host", "principal"))
            if entry["host"] not in kg.nodes:
                raise SchemaError(f"account {aid!r} references unknown host {entry['host']!r}")
            kg.add_edge(entry["host"], R.HAS_ACCOUNT, aid)
            principal = entry.get("principal")
            if principal:
                pid = f"principal-{principal}"
                if pid not in kg.nodes:
                    kg.add_node(pid, K.PRINCIPAL, name=principal)
                kg.add_edge(aid, R.HAS_PRINCIPAL, pid)
        for entry in self.section("detectors"):
            did = self.node(entry, K.DETECTOR, ("monitors",))
            for target in entry.get("monitors") or []:
                self.edge(did, R.MONITORS, target, did)
        zone = (self.doc.get("attacker") or {}).get("location") if isinstance(self.doc.get("attacker"), dict) else None
        if zone is not None and zone not in kg.nodes:
            raise SchemaError(f"attacker location {zone!r} is not a known network")


def _check_address(address: str, network: KGNode, host: str) -> None:
    try:
        inside = ipaddress.ip_address(address) in ipaddress.ip_network(network.attributes.get("cidr"), strict=False)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"host {host!r}: bad address {address!r} or cidr: {exc}") from None
    if not inside:
        raise SchemaError(f"host {host!r}: address {address} not inside {network.id} ({network.attributes.get('cidr')})")


# ---------------------------------------------------------------- snapshots


def snapshot_document(kg: KnowledgeGraph) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "nodes": [
            {"id": n.id, "kind": n.kind.value, "attributes": dict(sorted(n.attributes.items()))}
            for n in (kg.nodes[i] for i in sorted(kg.nodes))
        ],
        "edges": [{"src": e.src, "relation": e.relation.value, "dst": e.dst} for e in _edge_order(kg.edges)],
    }
    for key in META_KEYS:
        if key in kg.meta:
            doc[key] = kg.meta[key]
    return doc


def _edge_order(edges: Iterable[KGEdge]) -> list[KGEdge]:
    return sorted(edges, key=lambda e: (e.src, e.relation.value, e.dst))


def export_snapshot(kg: KnowledgeGraph) -> str:
    return yaml.safe_dump(snapshot_document(kg), sort_keys=False, default_flow_style=False)


# ---------------------------------------------------------------- runtime


def add_observation(
    kg: KnowledgeGraph,
    detector: str,
    indicator_type: str,
    subject: str,
    timestamp: int,
    **attributes: Any,
) -> str:
    """Record one detector observation; observations are never deduplicated.

    Node and both edges count as a single logical mutation, so the revision
    grows by exactly one.
    """
    det = kg.find_detector(detector)
    node = kg.nodes.get(subject)
    if node is None or node.kind not in (K.HOST, K.IP_ADDRESS):
        raise UnknownSubject(f"observation subject {subject!r} is not a known host or address")
    obs_id = f"obs-{len(kg.of_kind(K.OBSERVATION)):06d}"
    while obs_id in kg.nodes:
        obs_id += "x"
    before = kg.revision
    kg.add_node(obs_id, K.OBSERVATION, indicator_type=indicator_type, timestamp=int(timestamp), **attributes)
    kg.add_edge(obs_id, R.OBSERVED_BY, det.id)
    kg.add_edge(obs_id, R.CONCERNS, subject)
    kg.revision = before + 1
    return obs_id


def query(
    kg: KnowledgeGraph,
    kind: NodeKind | str,
    filters: Mapping[str, Any] | None = None,
    relation: Relation | str | None = None,
    target_kind: NodeKind | str | None = None,
    target_filters: Mapping[str, Any] | None = None,
) -> list[str]:
    """Ids of ``kind`` nodes matching ``filters``, optionally required to have
    an outgoing ``relation`` edge to a node matching the target constraints."""
    kind = _kind(kind)
    rel = _relation(relation) if relation is not None else None
    tkind = _kind(target_kind) if target_kind is not None else None
    filters = filters or {}
    target_filters = target_filters or {}

    def matches(node: KGNode, want: Mapping[str, Any]) -> bool:
        return all(k in node.attributes and node.attributes[k] == v for k, v in want.items())

    result = []
    for node in kg.of_kind(kind):
        if not matches(node, filters):
            continue
        if rel is not None:
            targets = [kg.nodes[d] for d in kg.successors(node.id, rel) if d in kg.nodes]
            if not any((tkind is None or t.kind == tkind) and matches(t, target_filters) for t in targets):
                continue
        result.append(node.id)
    return result
