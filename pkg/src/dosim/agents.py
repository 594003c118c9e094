"""The four agent kinds and their message choreography.

* Network sensors (NS) count flows at a vantage node, report feature vectors
  once per window and raise signature alarms as soon as a malformed packet
  is seen.
* Host sensors (HS) watch CPU and memory of one host.
* Detection and reaction agents (DRA) own a :class:`~dosim.trust.TrustModel`,
  turn alarms into trust observations, exchange reputation with peers and
  issue filter rules once a cluster stays malicious for ``k_confirm`` windows.
* Network elements (NE) hold the installed filter rules.

Agents only talk through :class:`AgentMessage` values carried by a
:class:`Bus`; none of them reads another agent's state.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Deque, Dict, FrozenSet, List, NamedTuple, Optional, Tuple, Union

from .errors import GeneralizationError, InvalidMessageError, RuleInstallError
from .flows import FeatureVector, FlowKey, FlowTable, close_window, update_flow
from .kinds import AttackKind, NodeKind, Proto
from .signatures import signature_match
from .sim_core import HostState, Node, advance_host_resources
from .trust import (FlowStatus, Label, Mode, ReputationMessage, TrustCluster, TrustModel,
                    aggregate_feedback)

__all__ = [
    "Alarm", "AlarmKind", "Predicates", "FilterRule", "Policy", "AgentMessage", "FlowReport",
    "Bus", "NetworkSensor", "HostSensor", "DraState", "NeState", "MemberRecord",
    "signature_match", "ns_step", "hs_step", "dra_step", "generalize_rule",
    "install_rule", "expire_rules", "ne_apply",
]

log = logging.getLogger(__name__)

HS_SAMPLE = 0.1
UTIL_THRESHOLD = 0.9
SUSTAIN = 1.0
REALARM = 1.0
EPS = 1e-9
OVERSIZE = 65536
OVERSIZE_RATIO = 2.0


class AlarmKind(str, Enum):
    RESOURCE = "resource_depletion"
    SIGNATURE = "signature"


@dataclass(frozen=True)
class Alarm:
    host: str
    at: float
    severity: float
    kind: AlarmKind = AlarmKind.RESOURCE
    signature: Optional[AttackKind] = None

    def __post_init__(self):
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"alarm severity {self.severity} outside [0, 1]")
        if self.kind is AlarmKind.SIGNATURE and self.severity != 1.0:
            raise ValueError("signature alarms carry severity 1.0")


@dataclass(frozen=True)
class Predicates:
    dst: Optional[str] = None
    proto: Optional[Proto] = None
    src_in: Optional[FrozenSet[str]] = None
    min_rate: Optional[float] = None
    min_size: Optional[int] = None

    def __post_init__(self):
        if all(v is None for v in (self.dst, self.proto, self.src_in,
                                   self.min_rate, self.min_size)):
            raise ValueError("a filter rule needs at least one predicate")

    def matches(self, packet, rate: float) -> bool:
        key = packet.flow_key
        if self.dst is not None and key.dst != self.dst:
            return False
        if self.proto is not None and key.proto != self.proto:
            return False
        if self.src_in is not None and key.src not in self.src_in:
            return False
        if self.min_size is not None and packet.size < self.min_size:
            return False
        if self.min_rate is not None and rate < self.min_rate:
            return False
        return True

    def describe(self) -> str:
        parts = []
        if self.dst is not None:
            parts.append(f"dst={self.dst}")
        if self.proto is not None:
            parts.append(f"proto={self.proto.value}")
        if self.src_in is not None:
            parts.append("src_in=" + "|".join(sorted(self.src_in)))
        if self.min_rate is not None:
            parts.append(f"rate>={self.min_rate!r}")
        if self.min_size is not None:
            parts.append(f"size>={self.min_size}")
        return ",".join(parts)


@dataclass(frozen=True)
class FilterRule:
    id: str
    predicates: Predicates
    installed_at: float = 0.0
    ttl: float = 30.0
    origin_dra: str = ""

    def __post_init__(self):
        if not self.ttl > 0:
            raise ValueError("rule ttl must be positive")

    def active(self, now: float) -> bool:
        return self.installed_at <= now < self.installed_at + self.ttl


@dataclass(frozen=True)
class Policy:
    k_confirm: int = 3
    rule_ttl: float = 30.0
    broadcast_on: Optional[float] = None  # defaults to the model's theta_mal

    def __post_init__(self):
        if self.k_confirm < 1:
            raise ValueError("k_confirm must be >= 1")
        if not self.rule_ttl > 0:
            raise ValueError("rule_ttl must be positive")


@dataclass(frozen=True)
class FlowReport:
    sensor: str
    vectors: Tuple[Tuple[FlowKey, FeatureVector], ...] = ()
    closed: Tuple[FlowKey, ...] = ()


Body = Union[FlowReport, Alarm, ReputationMessage, FilterRule]


@dataclass(frozen=True)
class AgentMessage:
    frm: str
    to: str
    at: float
    body: Body


class Bus:
    """Fixed-latency message delivery; same latency keeps each (from, to) pair FIFO."""

    def __init__(self, engine, latency: float = 0.01):
        self.engine = engine
        self.latency = latency
        self.handlers: Dict[str, Callable[[AgentMessage], None]] = {}
        self.on_send: List[Callable[[AgentMessage], None]] = []

    def register(self, agent_id: str, handler: Callable[[AgentMessage], None]) -> None:
        if agent_id in self.handlers:
            raise ValueError(f"agent id {agent_id!r} registered twice")
        self.handlers[agent_id] = handler

    def send(self, frm: str, to: str, body: Body) -> AgentMessage:
        if to not in self.handlers:
            raise KeyError(f"no agent {to!r} on the bus")
        msg = AgentMessage(frm, to, self.engine.now, body)
        for cb in self.on_send:
            cb(msg)
        self.engine.schedule(self.engine.now + self.latency, self._deliver, msg)
        return msg

    def _deliver(self, msg: AgentMessage) -> None:
        self.handlers[msg.to](msg)


# --- network sensor ----------------------------------------------------------------

@dataclass
class NetworkSensor:
    id: str
    node: str
    dra: str
    table: FlowTable = field(default_factory=FlowTable)
    window_alarms: List[Alarm] = field(default_factory=list)

    def observe(self, packet, now: float) -> Optional[Alarm]:
        """Count a packet; return a signature alarm if it matches one."""
        update_flow(self.table, packet, now)
        sig = signature_match(packet)
        if sig is None:
            return None
        alarm = Alarm(packet.dst, now, 1.0, AlarmKind.SIGNATURE, sig)
        self.window_alarms.append(alarm)
        return alarm


def ns_step(ns: NetworkSensor, now: float) -> Tuple[FlowReport, List[Alarm]]:
    """Close the window: one report for the DRA plus the alarms already raised in it."""
    closed = close_window(ns.table, now)
    alarms, ns.window_alarms = ns.window_alarms, []
    return FlowReport(ns.id, tuple(closed.reports), tuple(closed.closed)), alarms


# --- host sensor ---------------------------------------------------------------------

@dataclass
class HostSensor:
    id: str
    host: str
    dra: str
    above_since: Optional[float] = None
    last_alarm: Optional[float] = None
    crash_seen: bool = False
    crash_reported: bool = False

    def _due(self, now: float) -> bool:
        return self.last_alarm is None or now - self.last_alarm >= REALARM - EPS


def hs_step(hs: HostSensor, host_state: HostState, now: float) -> Optional[Alarm]:
    if not host_state.is_up(now):
        hs.crash_seen = True
        hs.above_since = None
        if not hs.crash_reported and hs._due(now):
            hs.crash_reported = True
            hs.last_alarm = now
            return Alarm(hs.host, now, 1.0)
        return None
    hs.crash_seen = hs.crash_reported = False
    util = advance_host_resources(host_state, HS_SAMPLE, now)
    if util > UTIL_THRESHOLD:
        if hs.above_since is None:
            hs.above_since = now
    else:
        hs.above_since = None
    if not hs._due(now):
        return None
    if host_state.mem_used >= host_state.node.mem_slots:
        hs.last_alarm = now
        return Alarm(hs.host, now, 1.0)
    if hs.above_since is not None and now - hs.above_since >= SUSTAIN - EPS:
        hs.last_alarm = now
        sev = min(1.0, max(0.0, (util - UTIL_THRESHOLD) / (1.0 - UTIL_THRESHOLD)))
        return Alarm(hs.host, now, sev)
    return None


# --- network element -----------------------------------------------------------------

@dataclass
class NeState:
    node: Node
    rules: Dict[str, FilterRule] = field(default_factory=dict)
    counters: Dict[FlowKey, Deque[float]] = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.node.id


def install_rule(ne: NeState, rule: FilterRule, now: float) -> Tuple[FilterRule, bool]:
    """Activate ``rule`` at ``now``. Returns (active rule, refreshed?)."""
    if ne.node.kind is not NodeKind.NE:
        raise RuleInstallError(f"node {ne.node.id!r} is a {ne.node.kind.value}, not an NE")
    expire_rules(ne, now)
    for rid, existing in ne.rules.items():
        if existing.predicates == rule.predicates:
            refreshed = replace(existing, installed_at=now, ttl=rule.ttl)
            ne.rules[rid] = refreshed
            return refreshed, True
    active = replace(rule, installed_at=now)
    ne.rules[active.id] = active
    return active, False


def expire_rules(ne: NeState, now: float) -> List[FilterRule]:
    stale = [r for r in ne.rules.values() if not r.active(now)]
    for r in stale:
        del ne.rules[r.id]
    return stale


def _flow_rate(ne: NeState, key: FlowKey, now: float) -> float:
    q = ne.counters.get(key)
    if q is None:
        q = ne.counters[key] = deque()
    q.append(now)
    while q[0] <= now - 1.0:
        q.popleft()
    return float(len(q))


def ne_apply(ne: NeState, packet, now: float) -> Optional[Tuple[str, float]]:
    """Return (rule id, measured rate) of the first matching active rule, else None."""
    rate = _flow_rate(ne, packet.flow_key, now)
    if not ne.rules:
        return None
    for rid in sorted(ne.rules):
        rule = ne.rules[rid]
        if rule.active(now) and rule.predicates.matches(packet, rate):
            return rid, rate
    return None


# --- detection and reaction agent ------------------------------------------------------

class MemberRecord(NamedTuple):
    flow_key: FlowKey
    rate: float
    size_ratio: float


def generalize_rule(cluster: TrustCluster, members: List[MemberRecord], *, rule_id: str = "",
                    now: float = 0.0, ttl: float = 30.0, origin: str = "") -> FilterRule:
    """Describe a cluster's member flows as one conjunctive filter rule.

    Keeps dst/proto only when all members share them, adds ``rate >= min``
    and, for oversized packets, ``size >= 65536``.
    """
    if not members:
        raise GeneralizationError(f"cluster {cluster.id} has no member flows")
    dsts = {m.flow_key.dst for m in members}
    protos = {m.flow_key.proto for m in members}
    mean_ratio = sum(m.size_ratio for m in members) / len(members)
    preds = Predicates(
        dst=dsts.pop() if len(dsts) == 1 else None,
        proto=protos.pop() if len(protos) == 1 else None,
        min_rate=min(m.rate for m in members),
        min_size=OVERSIZE if mean_ratio > OVERSIZE_RATIO else None,
    )
    if preds.dst is None and preds.proto is None and preds.min_size is None:
        raise GeneralizationError(
            f"cluster {cluster.id}: members share nothing but a rate; refusing rate-only rule")
    return FilterRule(rule_id, preds, now, ttl, origin)


@dataclass
class DraState:
    id: str
    model: TrustModel
    policy: Policy = field(default_factory=Policy)
    node: Optional[str] = None
    subscriptions: List[str] = field(default_factory=list)
    nes: List[str] = field(default_factory=list)
    hops: Optional[Callable[[str, str], int]] = None
    window_len: float = 1.0
    horizon: float = 5.0
    malicious_streak: Dict[int, int] = field(default_factory=dict)
    pending_rules: List[FilterRule] = field(default_factory=list)
    flows: Dict[FlowKey, FlowStatus] = field(default_factory=dict)
    alarms: List[Alarm] = field(default_factory=list)
    labels: Dict[int, Label] = field(default_factory=dict)
    below: set = field(default_factory=set)
    rule_expiry: Dict[int, float] = field(default_factory=dict)
    rule_counter: int = 0


@dataclass
class DraOutput:
    messages: List[Tuple[str, Body]] = field(default_factory=list)   # (to, body)
    rules: List[Tuple[str, FilterRule]] = field(default_factory=list)  # (ne node, rule)
    records: List[Tuple[str, dict]] = field(default_factory=list)      # (kind, fields)


def _note_label(dra: DraState, cid: int, out: DraOutput) -> Label:
    c = dra.model.get(cid)
    label = dra.model.classify(cid)
    if dra.labels.get(cid) is not label:
        dra.labels[cid] = label
        members = sorted({f"{k.src}>{k.dst}/{k.proto.value}" for k in c.member_flows})
        out.records.append(("classify", {
            "dra": dra.id, "cluster": cid, "label": label.value, "trust": c.trust,
            "weight": c.weight, "shadow": c.shadow, "members": ";".join(members),
        }))
    return label


def _members(dra: DraState, cluster: TrustCluster) -> List[MemberRecord]:
    out = []
    for key in sorted(set(cluster.member_flows)):
        st = dra.flows.get(key)
        if st is None or st.cluster_id != cluster.id or not st.rates:
            continue
        out.append(MemberRecord(key, min(st.rates), st.size_ratio))
    return out


def _pick_ne(dra: DraState, rule: FilterRule) -> Optional[str]:
    if not dra.nes:
        return None
    anchor = rule.predicates.dst or dra.node
    if anchor is None or dra.hops is None:
        return sorted(dra.nes)[0]
    return min(dra.nes, key=lambda ne: (dra.hops(ne, anchor), ne))


def dra_step(dra: DraState, inbox: List[AgentMessage], now: float) -> DraOutput:
    out = DraOutput()
    model = dra.model
    touched = set()
    reputation = []

    # (1) observe every reported vector, bank alarms
    for msg in inbox:
        body = msg.body
        try:
            if isinstance(body, FlowReport):
                for key, vec in body.vectors:
                    if not all(math.isfinite(x) for x in vec):
                        raise InvalidMessageError(f"non-finite feature vector for {key}")
                    before = len(model)
                    cid = model.observe(vec, key, now)
                    touched.add(cid)
                    if len(model) > before:
                        for peer in dra.subscriptions:
                            out.messages.append((peer, ReputationMessage(
                                dra.id, tuple(vec), 0.5, 0, Mode.QUERY, now)))
                    st = dra.flows.get(key)
                    if st is None:
                        st = dra.flows[key] = FlowStatus(key, cid, now)
                    st.cluster_id = cid
                    st.last_seen = now
                    st.closed_at = None
                    st.reinforced = False
                    st.rates.append(round(math.expm1(vec[0]), 6))
                    st.size_ratio = vec[1]
                for key in body.closed:
                    st = dra.flows.get(key)
                    if st is not None and st.closed_at is None:
                        st.closed_at = now
            elif isinstance(body, Alarm):
                dra.alarms.append(body)
            elif isinstance(body, ReputationMessage):
                reputation.append(msg)
            else:
                raise InvalidMessageError(f"unexpected message body {type(body).__name__}")
        except (InvalidMessageError, ValueError, TypeError) as exc:
            log.debug("dra %s skipped message: %s", dra.id, exc)
            out.records.append(("agent-error", {"agent": dra.id, "error": str(exc)}))

    # (2) host feedback -> trust observations
    dra.alarms = [a for a in dra.alarms if a.at >= now - dra.horizon]
    for key in [k for k, st in dra.flows.items()
                if st.closed_at is not None and now - st.closed_at > dra.horizon]:
        del dra.flows[key]
    for obs in aggregate_feedback(dra.alarms, list(dra.flows.values()), now, dra.horizon):
        st = dra.flows[obs.flow_key]
        model.update_trust(st.cluster_id, obs.o)
        touched.add(st.cluster_id)
        if st.closed_at is not None:
            st.reinforced = True

    # (3)-(5) classify, inform, react
    theta = dra.policy.broadcast_on if dra.policy.broadcast_on is not None else model.theta_mal
    for cid in sorted(touched):
        c = model.get(cid)
        label = _note_label(dra, cid, out)
        if label is Label.MALICIOUS:
            dra.malicious_streak[cid] = dra.malicious_streak.get(cid, 0) + 1
        else:
            dra.malicious_streak[cid] = 0
        if c.trust < theta:
            if cid not in dra.below and not c.shadow:
                dra.below.add(cid)
                for peer in dra.subscriptions:
                    out.messages.append((peer, ReputationMessage(
                        dra.id, c.centroid, c.trust, c.weight, Mode.INFORM, now)))
        else:
            dra.below.discard(cid)

        streak = dra.malicious_streak[cid]
        if streak < dra.policy.k_confirm:
            continue
        expiry = dra.rule_expiry.get(cid)
        if expiry is not None and now < expiry - 2 * dra.window_len:
            continue
        try:
            rule = generalize_rule(c, _members(dra, c),
                                   rule_id=f"{dra.id}-{dra.rule_counter:04d}", now=now,
                                   ttl=dra.policy.rule_ttl, origin=dra.id)
        except GeneralizationError as exc:
            out.records.append(("agent-error", {"agent": dra.id, "error": str(exc)}))
            dra.rule_expiry[cid] = now + dra.policy.rule_ttl
            continue
        ne = _pick_ne(dra, rule)
        if ne is None:
            out.records.append(("agent-error", {"agent": dra.id,
                                                "error": "no network element to reconfigure"}))
            continue
        dra.rule_counter += 1
        dra.rule_expiry[cid] = now + dra.policy.rule_ttl
        dra.pending_rules.append(rule)
        out.rules.append((ne, rule))

    # (6) reputation from peers
    for msg in reputation:
        rep = msg.body
        try:
            if rep.mode is Mode.QUERY:
                ans = model.answer_query(rep.centroid)
                if ans is not None:
                    out.messages.append((msg.frm, ReputationMessage(
                        dra.id, rep.centroid, ans[0], ans[1], Mode.REPLY, now)))
            else:
                cid = model.merge_reputation(rep)
                _note_label(dra, cid, out)
        except InvalidMessageError as exc:
            out.records.append(("agent-error", {"agent": dra.id, "error": str(exc)}))
    return out
