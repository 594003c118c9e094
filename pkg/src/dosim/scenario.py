"""Scenario documents: strict YAML schema with defaults.

Unknown keys are rejected, every node reference is resolved, and any
failure surfaces as :class:`~dosim.errors.ScenarioError` with a message that
names the offending key or node.
"""

from __future__ import annotations

from importlib import resources
from typing import Dict, List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ScenarioError, TopologyError
from .kinds import AttackKind, NodeKind
from .sim_core import Link, Node, Topology


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class NodeSpec(_Strict):
    id: str
    kind: NodeKind = NodeKind.HOST
    cpu_capacity: float = Field(1000.0, gt=0)
    mem_slots: int = Field(256, ge=1)
    vulnerable_to: List[AttackKind] = []
    recovery_after: Optional[float] = Field(None, gt=0)


class LinkSpec(_Strict):
    id: str
    a: str = Field(alias="from")
    b: str = Field(alias="to")
    capacity: float = Field(1000.0, gt=0)
    queue_limit: int = Field(64, ge=1)
    latency: float = Field(0.001, ge=0)


class TopologySpec(_Strict):
    nodes: List[NodeSpec]
    links: List[LinkSpec] = []


class SenderSpec(_Strict):
    src: str
    dst: str
    min_rate: float = Field(1.0, gt=0)
    max_rate: float = Field(10.0, gt=0)
    initial_rate: Optional[float] = Field(None, gt=0)
    additive_step: float = Field(10.0, ge=0)
    rto: float = Field(1.0, gt=0)
    size: int = Field(1000, ge=1)
    start: float = Field(0.0, ge=0)
    stop: Optional[float] = None


class BurstSpec(_Strict):
    period: float = Field(1.0, gt=0)
    length: float = Field(gt=0)
    burst_rate: float = Field(gt=0)


class AttackSpec(_Strict):
    kind: AttackKind
    sources: List[str]
    victim: str
    reflectors: List[str] = []
    rate: float = Field(0.0, ge=0)
    burst: Optional[BurstSpec] = None
    start: float = Field(0.0, ge=0)
    stop: Optional[float] = None
    size: int = Field(500, ge=1)
    repeat: float = Field(0.0, ge=0)


class DraSpec(_Strict):
    id: str
    node: Optional[str] = None
    peers: List[str] = []
    nes: Optional[List[str]] = None


class NsSpec(_Strict):
    id: str
    node: str
    dra: str


class HsSpec(_Strict):
    host: str
    dra: str
    id: Optional[str] = None

    @property
    def agent_id(self) -> str:
        return self.id or f"hs-{self.host}"


class PolicySpec(_Strict):
    k_confirm: int = Field(3, ge=1)
    rule_ttl: float = Field(30.0, gt=0)
    broadcast_on: Optional[float] = Field(None, ge=0, le=1)


class TrustSpec(_Strict):
    tau: float = Field(0.5, gt=0)
    eta: float = Field(0.05, gt=0, lt=1)
    alpha: float = Field(0.1, gt=0, le=1)
    theta_mal: float = Field(0.3, ge=0, le=1)
    theta_ben: float = Field(0.7, ge=0, le=1)


class AgentsSpec(_Strict):
    dras: List[DraSpec] = []
    ns: List[NsSpec] = []
    hs: List[HsSpec] = []
    policy: PolicySpec = PolicySpec()
    trust: TrustSpec = TrustSpec()
    window_len: float = Field(1.0, gt=0)
    horizon: float = Field(5.0, gt=0)


class Scenario(_Strict):
    name: str = "scenario"
    duration: float = Field(gt=0)
    seed: int = Field(0, ge=0)
    topology: TopologySpec
    legit_senders: List[SenderSpec] = []
    attacks: List[AttackSpec] = []
    agents: AgentsSpec = AgentsSpec()
    bus_latency: float = Field(0.01, gt=0)

    @model_validator(mode="after")
    def _check_references(self) -> "Scenario":
        kinds: Dict[str, NodeKind] = {n.id: n.kind for n in self.topology.nodes}

        def need(ref: str, where: str, kind: Optional[NodeKind] = None) -> None:
            if ref not in kinds:
                raise ValueError(f"{where} references unknown node {ref!r}")
            if kind is not None and kinds[ref] is not kind:
                raise ValueError(f"{where}: node {ref!r} must be a {kind.value}, "
                                 f"not a {kinds[ref].value}")

        for i, s in enumerate(self.legit_senders):
            need(s.src, f"legit_senders[{i}].src", NodeKind.HOST)
            need(s.dst, f"legit_senders[{i}].dst", NodeKind.HOST)
            if s.min_rate > s.max_rate:
                raise ValueError(f"legit_senders[{i}]: min_rate > max_rate")
        for i, a in enumerate(self.attacks):
            for src in a.sources:
                need(src, f"attacks[{i}].sources", NodeKind.HOST)
            need(a.victim, f"attacks[{i}].victim", NodeKind.HOST)
            for r in a.reflectors:
                need(r, f"attacks[{i}].reflectors", NodeKind.HOST)
            if not a.sources:
                raise ValueError(f"attacks[{i}] needs at least one source")
            kind = a.kind.value
            if (a.kind in (AttackKind.Smurf, AttackKind.Fraggle)) != bool(a.reflectors):
                raise ValueError(f"attacks[{i}]: {kind} needs reflectors iff it is a reflector attack")
            if a.kind in (AttackKind.Shrew, AttackKind.RoQ):
                if a.burst is None:
                    raise ValueError(f"attacks[{i}]: {kind} needs a burst profile")
                if not a.burst.length < a.burst.period:
                    raise ValueError(f"attacks[{i}]: burst length must be below its period")
            elif a.kind not in (AttackKind.PingOfDeath, AttackKind.Land) and not a.rate > 0:
                raise ValueError(f"attacks[{i}]: {kind} needs a positive rate")
        dra_ids = [d.id for d in self.agents.dras]
        if len(set(dra_ids)) != len(dra_ids):
            raise ValueError("duplicate DRA id")
        for d in self.agents.dras:
            if d.node is not None:
                need(d.node, f"dra {d.id!r}.node")
            for p in d.peers:
                if p not in dra_ids:
                    raise ValueError(f"dra {d.id!r} peers with unknown DRA {p!r}")
            for ne in d.nes or []:
                need(ne, f"dra {d.id!r}.nes", NodeKind.NE)
        for ns in self.agents.ns:
            need(ns.node, f"ns {ns.id!r}.node")
            if ns.dra not in dra_ids:
                raise ValueError(f"ns {ns.id!r} reports to unknown DRA {ns.dra!r}")
        for hs in self.agents.hs:
            need(hs.host, "hs.host", NodeKind.HOST)
            if hs.dra not in dra_ids:
                raise ValueError(f"hs on {hs.host!r} reports to unknown DRA {hs.dra!r}")
        agent_ids = dra_ids + [ns.id for ns in self.agents.ns] + [hs.agent_id for hs in self.agents.hs]
        dup = sorted({a for a in agent_ids if agent_ids.count(a) > 1})
        if dup:
            raise ValueError(f"duplicate agent id {dup[0]!r}")
        if self.agents.ns and not self.agents.dras:
            raise ValueError("network sensors need at least one DRA")
        t = self.agents.trust
        if not t.theta_mal < t.theta_ben:
            raise ValueError("trust.theta_mal must be below trust.theta_ben")
        try:
            self.build_topology()
        except TopologyError as exc:
            raise ValueError(str(exc)) from None
        return self

    def build_topology(self) -> Topology:
        nodes = [Node(n.id, n.kind, n.cpu_capacity, n.mem_slots, frozenset(n.vulnerable_to),
                      n.recovery_after) for n in self.topology.nodes]
        links = [Link(l.id, l.a, l.b, l.capacity, l.queue_limit, l.latency)
                 for l in self.topology.links]
        return Topology(nodes, links)


class _UniqueKeyLoader(yaml.SafeLoader):
    pass


def _mapping(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            mark = key_node.start_mark
            raise ScenarioError(f"duplicate key {key!r} at line {mark.line + 1}, "
                                f"column {mark.column + 1}")
        seen.add(key)
    return loader.construct_mapping(node, deep)


_UniqueKeyLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping)


def _describe(err: dict) -> str:
    loc = ".".join(str(p) for p in err["loc"])
    kind = err["type"]
    if kind == "extra_forbidden":
        return f"unknown key {str(err['loc'][-1])!r} at {loc}"
    if kind == "missing":
        return f"missing required key {str(err['loc'][-1])!r}" + (
            f" at {loc}" if len(err["loc"]) > 1 else "")
    msg = err["msg"]
    if msg.startswith("Value error, "):
        msg = msg[len("Value error, "):]
    return f"{loc}: {msg}" if loc else msg


def parse_scenario(text: str) -> Scenario:
    try:
        data = yaml.load(text, Loader=_UniqueKeyLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ScenarioError(f"syntax error{where}: {problem}") from None
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a mapping at the top level")
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError("; ".join(_describe(e) for e in exc.errors())) from None


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def bundled_scenarios() -> List[str]:
    """Names of the scenario files shipped with the package."""
    root = resources.files("dosim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_bundled(name: str) -> Scenario:
    path = resources.files("dosim") / "scenarios" / f"{name}.yaml"
    if not path.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return parse_scenario(path.read_text(encoding="utf-8"))
