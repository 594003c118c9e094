"""End-to-end execution of a :class:`~dosim.scenario.Scenario`.

:class:`Simulation` wires the engine, the network, the message bus, every
agent, the attack generators and the legitimate senders together, and
records what happens in an :class:`~dosim.eventlog.EventLog`.

Ground truth (``attack_tag``) is copied into a side table at injection time
and only the logger reads it. With ``blind=True`` the tag is also removed
from the packet itself, so agents provably cannot depend on it.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
from typing import Callable, Dict, List, Optional, Tuple

from .agents import (HS_SAMPLE, AgentMessage, Alarm, Bus, DraState, FilterRule, HostSensor,
                     NeState, NetworkSensor, Policy, dra_step, hs_step, install_rule, ne_apply,
                     ns_step)
from .attacks import (AimdEvent, AimdSender, Burst, GeneratorState, aimd_step, emit, first_emission,
                      reflect)
from .eventlog import EventLog
from .flows import FlowKey, FlowTable
from .kinds import AttackKind, NodeKind, Proto
from .scenario import Scenario
from .sim_core import Engine, Network, Outcome, Packet
from .trust import ReputationMessage, TrustModel

log = logging.getLogger(__name__)

JITTER = (0.9, 1.1)


def flow_label(key: FlowKey) -> str:
    return f"{key.src}>{key.dst}/{key.proto.value}"


def substream(seed: int, consumer: str) -> random.Random:
    """Independent generator for one consumer; adding consumers never shifts others."""
    digest = hashlib.sha256(f"{seed}:{consumer}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _tag(kind: Optional[AttackKind]) -> Optional[str]:
    return None if kind is None else kind.value


class Simulation:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None, blind: bool = False):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.blind = blind
        self.topology = scenario.build_topology()
        self.engine = Engine()
        self.net = Network(self.engine, self.topology)
        self.bus = Bus(self.engine, scenario.bus_latency)
        self.log = EventLog()
        self.truth: Dict[int, Optional[AttackKind]] = {}
        self.flow_counts: Dict[FlowKey, List[int]] = {}  # key -> [legit, attack]

        ag = scenario.agents
        self.window_len = ag.window_len
        self.dras: Dict[str, DraState] = {}
        self.inbox: Dict[str, List[AgentMessage]] = {}
        self.ns: Dict[str, NetworkSensor] = {}
        self.hs: Dict[str, HostSensor] = {}
        self.nes: Dict[str, NeState] = {}
        self.senders: Dict[str, AimdSender] = {}
        self._sender_gen: Dict[str, int] = {}
        self._rng: Dict[str, random.Random] = {}
        self.generators: List[GeneratorState] = []

        self._build_agents()
        self._build_traffic()
        self.net.on_deliver.append(self._delivered)
        self.net.on_drop.append(self._dropped)
        self.bus.on_send.append(self._bus_sent)

    # --- construction ---------------------------------------------------------------

    def _build_agents(self) -> None:
        ag = self.scenario.agents
        t = ag.trust
        policy = Policy(ag.policy.k_confirm, ag.policy.rule_ttl, ag.policy.broadcast_on)
        all_nes = self.topology.of_kind(NodeKind.NE)
        for node in all_nes:
            ne = NeState(self.topology.nodes[node])
            self.nes[node] = ne
            self.net.filters[node] = self._filter_for(ne)
            self.bus.register(self._ne_addr(node), self._ne_handler(ne))
        for d in ag.dras:
            dra = DraState(d.id, TrustModel(t.tau, t.eta, t.alpha, t.theta_mal, t.theta_ben),
                           policy, node=d.node, subscriptions=list(d.peers),
                           nes=list(d.nes) if d.nes is not None else list(all_nes),
                           hops=self.topology.hops, window_len=ag.window_len,
                           horizon=ag.horizon)
            self.dras[d.id] = dra
            self.inbox[d.id] = []
            self.bus.register(d.id, self.inbox[d.id].append)
        for spec in ag.ns:
            ns = NetworkSensor(spec.id, spec.node, spec.dra,
                               FlowTable(0.0, ag.window_len))
            self.ns[spec.id] = ns
            self.net.taps.setdefault(spec.node, []).append(self._tap_for(ns))
            self.bus.register(spec.id, lambda msg: None)
        for spec in ag.hs:
            hs = HostSensor(spec.agent_id, spec.host, spec.dra)
            self.hs[hs.id] = hs
            self.bus.register(hs.id, lambda msg: None)

        # periodic steps, pre-scheduled in (time, agent id) order so that at
        # equal times they run before any packet event scheduled later
        steps: List[Tuple[float, int, str, Callable, tuple]] = []
        duration = self.scenario.duration
        w = ag.window_len
        n_windows = int(math.floor(duration / w + 1e-9))
        for k in range(1, n_windows + 1):
            for ns_id in sorted(self.ns):
                steps.append((k * w, 0, ns_id, self._ns_step, (self.ns[ns_id],)))
            for dra_id in sorted(self.dras):
                t_step = k * w + 2 * self.scenario.bus_latency
                if t_step <= duration:
                    steps.append((t_step, 1, dra_id, self._dra_step, (self.dras[dra_id],)))
        per_sec = round(1.0 / HS_SAMPLE)
        for k in range(1, int(math.floor(duration * per_sec + 1e-9)) + 1):
            for hs_id in sorted(self.hs):
                steps.append((k / per_sec, 2, hs_id, self._hs_step, (self.hs[hs_id],)))
        steps.sort(key=lambda s: (s[0], s[2], s[1]))
        for t_step, _, _, action, args in steps:
            self.engine.schedule(t_step, action, *args)

    def _build_traffic(self) -> None:
        sc = self.scenario
        for i, s in enumerate(sc.legit_senders):
            name = f"sender-{i}:{s.src}>{s.dst}"
            sender = AimdSender(s.src, s.dst, s.initial_rate or s.max_rate, s.min_rate,
                                s.max_rate, s.additive_step, s.rto, size=s.size, start=s.start,
                                stop=sc.duration if s.stop is None else min(s.stop, sc.duration))
            self.senders[name] = sender
            self._sender_gen[name] = 0
            self._rng[name] = substream(self.seed, name)
            # random phase so that senders starting together do not collide
            first = sender.start + self._rng[name].random() / sender.rate
            if first < sender.stop:
                self.engine.schedule(first, self._send, name, 0)
        for a in sc.attacks:
            burst = Burst(a.burst.period, a.burst.length, a.burst.burst_rate) if a.burst else None
            stop = sc.duration if a.stop is None else min(a.stop, sc.duration)
            gen = GeneratorState(a.kind, list(a.sources), a.victim, a.start, stop, a.rate,
                                 list(a.reflectors), burst, a.size, a.repeat)
            self.generators.append(gen)
            first = first_emission(gen)
            if first is not None:
                self.engine.schedule(first, self._attack, gen)

    @staticmethod
    def _ne_addr(node: str) -> str:
        return f"ne:{node}"

    # --- packet plumbing ------------------------------------------------------------

    def _inject(self, packet: Packet) -> int:
        src = self.net.hosts.get(packet.src)
        if src is not None and not src.is_up(self.engine.now):
            return -1  # crashed hosts emit nothing
        if packet.id < 0:
            packet.id = self.net.reserve_id()
        tag = packet.attack_tag
        self.truth[packet.id] = tag
        counts = self.flow_counts.setdefault(packet.flow_key, [0, 0])
        counts[0 if tag is None else 1] += 1
        if self.blind:
            packet.attack_tag = None
        return self.net.inject(packet)

    def _send(self, name: str, generation: int) -> None:
        if generation != self._sender_gen[name]:
            return
        s = self.senders[name]
        now = self.engine.now
        if now >= s.stop:
            return
        if s.paused(now):
            return
        if now - s.last_change >= 1.0 - 1e-9:
            aimd_step(s, AimdEvent.ACK_INTERVAL, now)
        if self.net.hosts[s.src].is_up(now):
            pkt = Packet(s.src, s.dst, Proto.TCPLIKE, s.size, now, origin=name)
            pkt.id = self.net.reserve_id()
            s.record_send(now, pkt.id)
            self._inject(pkt)
        lo, hi = JITTER
        nxt = now + self._rng[name].uniform(lo, hi) / s.rate
        if nxt < s.stop and self._sender_gen[name] == generation:
            self.engine.schedule(nxt, self._send, name, generation)

    def _attack(self, gen: GeneratorState) -> None:
        pkts, nxt = emit(gen, self.engine.now)
        for p in pkts:
            self._inject(p)
        if nxt is not None:
            self.engine.schedule(nxt, self._attack, gen)

    def _reflect(self, packet: Packet, reflector: str) -> None:
        reply = reflect(packet, reflector, self.engine.now)
        reply.attack_tag = self.truth.get(packet.id)
        self._inject(reply)

    def _delivered(self, packet: Packet, outcome: Outcome, now: float) -> None:
        tag = self.truth.get(packet.id)
        self.log.add(now, "deliver", pkt=packet.id, host=packet.dst,
                     flow=flow_label(packet.flow_key), outcome=outcome.value,
                     created=packet.created_at, tag=_tag(tag))
        if outcome is Outcome.CRASH_TRIGGERED:
            self.log.add(now, "crash", host=packet.dst, pkt=packet.id, tag=_tag(tag))
        if packet.echo_request and outcome is Outcome.ACCEPTED:
            self.engine.schedule(now, self._reflect, packet, packet.dst)

    def _dropped(self, packet: Packet, where: str, node: str, what, now: float) -> None:
        tag = _tag(self.truth.get(packet.id))
        flow = flow_label(packet.flow_key)
        if where == "filter":
            rule_id, rate = what
            self.log.add(now, "rule-drop", pkt=packet.id, node=node, rule=rule_id, rate=rate,
                         flow=flow, created=packet.created_at, tag=tag)
        else:
            self.log.add(now, "queue-drop", pkt=packet.id, node=node, link=what, flow=flow,
                         created=packet.created_at, tag=tag)
        if packet.origin in self.senders:
            self._transport_loss(packet.origin, packet, now)

    def _transport_loss(self, name: str, packet: Packet, now: float) -> None:
        s = self.senders[name]
        t_sent = packet.created_at
        if s.paused(now) or t_sent <= s.last_decrease:
            s.dropped.add(packet.id)
            return
        event = s.classify_drop(packet.id, t_sent)
        if event is AimdEvent.WINDOW_LOSS:
            aimd_step(s, event, t_sent)
            # later losses of packets already on the wire belong to this episode
            s.last_decrease = now
            self._sender_gen[name] += 1
            resume = max(now, s.paused_until)
            if resume < s.stop:
                self.engine.schedule(resume, self._send, name, self._sender_gen[name])
        else:
            aimd_step(s, event, now)

    def _filter_for(self, ne: NeState) -> Callable:
        def filt(packet: Packet, now: float):
            return ne_apply(ne, packet, now)
        return filt

    def _tap_for(self, ns: NetworkSensor) -> Callable:
        def tap(packet: Packet, now: float) -> None:
            alarm = ns.observe(packet, now)
            if alarm is not None:
                self._raise(ns.id, ns.dra, alarm)
        return tap

    # --- agents ---------------------------------------------------------------------

    def _raise(self, agent_id: str, dra: str, alarm: Alarm) -> None:
        self.log.add(self.engine.now, "alarm", host=alarm.host, severity=alarm.severity,
                     kind=alarm.kind.value, signature=_tag(alarm.signature), agent=agent_id)
        self.bus.send(agent_id, dra, alarm)

    def _ns_step(self, ns: NetworkSensor) -> None:
        report, _ = ns_step(ns, self.engine.now)  # alarms already went out on sight
        if report.vectors or report.closed:
            self.bus.send(ns.id, ns.dra, report)

    def _hs_step(self, hs: HostSensor) -> None:
        alarm = hs_step(hs, self.net.hosts[hs.host], self.engine.now)
        if alarm is not None:
            self._raise(hs.id, hs.dra, alarm)

    def _dra_step(self, dra: DraState) -> None:
        now = self.engine.now
        inbox = self.inbox[dra.id]
        batch = list(inbox)
        inbox.clear()
        out = dra_step(dra, batch, now)
        for kind, fields in out.records:
            self.log.add(now, kind, **fields)
        for to, body in out.messages:
            self.bus.send(dra.id, to, body)
        for ne, rule in out.rules:
            self.bus.send(dra.id, self._ne_addr(ne), rule)

    def _ne_handler(self, ne: NeState) -> Callable:
        def handle(msg: AgentMessage) -> None:
            now = self.engine.now
            rule = msg.body
            if not isinstance(rule, FilterRule):
                self.log.add(now, "agent-error", agent=ne.id,
                             error=f"unexpected message body {type(rule).__name__}")
                return
            active, refreshed = install_rule(ne, rule, now)
            p = active.predicates
            self.log.add(now, "rule-install", rule=active.id, dst=p.dst,
                         proto=None if p.proto is None else p.proto.value,
                         src_in=None if p.src_in is None else "|".join(sorted(p.src_in)),
                         min_rate=p.min_rate, min_size=p.min_size, ttl=active.ttl,
                         dra=active.origin_dra, ne=ne.id, refreshed=refreshed)
        return handle

    def _bus_sent(self, msg: AgentMessage) -> None:
        body = msg.body
        if isinstance(body, ReputationMessage):
            self.log.add(msg.at, "reputation", frm=body.origin_dra,
                         centroid="|".join(f"{c:.6f}" for c in body.centroid),
                         trust=body.trust, weight=body.weight, mode=body.mode.value, to=msg.to)

    # --- run ------------------------------------------------------------------------

    def run(self) -> EventLog:
        end = self.scenario.duration
        self.engine.run_until(end)
        for gen in self.generators:
            self.log.add(end, "gen", kind=gen.kind.value, victim=gen.victim, start=gen.start,
                         stop=gen.stop, emitted=gen.emitted)
        for key in sorted(self.flow_counts):
            legit, attack = self.flow_counts[key]
            self.log.add(end, "flow", flow=flow_label(key), legit=legit, attack=attack)
        s = self.engine.snapshot()
        self.log.add(end, "stats", injected=s.injected, delivered=s.delivered,
                     queue_dropped=s.queue_dropped, filter_dropped=s.filter_dropped,
                     in_flight=s.in_flight, delivered_dead=s.delivered_dead,
                     refused_mem=s.refused_mem)
        log.info("scenario %s seed %d: %d events, %d log records", self.scenario.name,
                 self.seed, self.engine.processed_events, len(self.log))
        return self.log


def run_scenario(scenario: Scenario, seed: Optional[int] = None, blind: bool = False):
    """Run ``scenario`` and return ``(MetricsReport, EventLog)``."""
    from .metrics import compute_metrics

    sim = Simulation(scenario, seed, blind)
    events = sim.run()
    return compute_metrics(events, scenario), events
