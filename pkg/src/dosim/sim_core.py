"""Discrete-event engine plus the protocol- and application-layer physics.

The engine is a plain (time, seq) heap. :class:`Network` forwards packets
hop by hop over drop-tail FIFO link queues with deterministic service time
``1/capacity`` and hands arriving packets to :func:`host_process`, which
charges CPU and memory on the destination host.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, FrozenSet, List, NamedTuple, Optional, Tuple

from .errors import CausalityError, TopologyError
from .flows import FlowKey
from .kinds import AttackKind, NodeKind, Proto
from .signatures import signature_match

CPU_WINDOW = 1.0
FLOW_IDLE_TIMEOUT = 5.0


@dataclass(eq=False)
class Packet:
    src: str
    dst: str
    proto: Proto
    size: int
    created_at: float
    spoofed_src: Optional[str] = None
    attack_tag: Optional[AttackKind] = None
    echo_request: bool = False
    origin: Optional[str] = None  # emitting sender, used only for transport feedback
    id: int = -1

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("packet size must be >= 1")

    @property
    def effective_src(self) -> str:
        return self.spoofed_src if self.spoofed_src is not None else self.src

    @property
    def flow_key(self) -> FlowKey:
        return FlowKey(self.effective_src, self.dst, self.proto)


# --- topology ---------------------------------------------------------------

@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind = NodeKind.HOST
    cpu_capacity: float = 1000.0
    mem_slots: int = 256
    vulnerable_to: FrozenSet[AttackKind] = frozenset()
    recovery_after: Optional[float] = None


@dataclass(frozen=True)
class Link:
    id: str
    a: str
    b: str
    capacity: float = 1000.0
    queue_limit: int = 64
    latency: float = 0.001


class Topology:
    """Nodes and bidirectional links with static shortest-path routing.

    Each link carries an independent queue per direction. Routes are hop-count
    shortest paths, ties broken by the lowest neighbour id, computed once.
    """

    def __init__(self, nodes: List[Node], links: List[Link]):
        self.nodes: Dict[str, Node] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise TopologyError(f"duplicate node id {n.id!r}")
            self.nodes[n.id] = n
        self.links: Dict[str, Link] = {}
        self.adj: Dict[str, Dict[str, Link]] = {n: {} for n in self.nodes}
        for link in links:
            if link.id in self.links:
                raise TopologyError(f"duplicate link id {link.id!r}")
            for end in (link.a, link.b):
                if end not in self.nodes:
                    raise TopologyError(f"link {link.id!r} references unknown node {end!r}")
            if link.a == link.b:
                raise TopologyError(f"link {link.id!r} is a self-loop")
            self.links[link.id] = link
            for u, v in ((link.a, link.b), (link.b, link.a)):
                prev = self.adj[u].get(v)
                if prev is None or link.id < prev.id:
                    self.adj[u][v] = link
        self._dist: Dict[str, Dict[str, int]] = {}
        self._next: Dict[str, Dict[str, str]] = {}
        for dst in sorted(self.nodes):
            self._route_to(dst)
        if self.nodes:
            first = next(iter(sorted(self.nodes)))
            if len(self._dist[first]) != len(self.nodes):
                raise TopologyError("topology is not connected")

    def _route_to(self, dst: str) -> None:
        dist = {dst: 0}
        frontier = deque([dst])
        while frontier:
            u = frontier.popleft()
            for v in sorted(self.adj[u]):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    frontier.append(v)
        nxt = {}
        for u, d in dist.items():
            if u != dst:
                nxt[u] = min(v for v in self.adj[u] if dist.get(v) == d - 1)
        self._dist[dst] = dist
        self._next[dst] = nxt

    def next_hop(self, node: str, dst: str) -> str:
        return self._next[dst][node]

    def hops(self, a: str, b: str) -> int:
        return self._dist[b][a]

    def link_between(self, u: str, v: str) -> Link:
        return self.adj[u][v]

    def path(self, src: str, dst: str) -> List[str]:
        out = [src]
        while out[-1] != dst:
            out.append(self.next_hop(out[-1], dst))
        return out

    def of_kind(self, kind: NodeKind) -> List[str]:
        return sorted(n.id for n in self.nodes.values() if n.kind == kind)


# --- link queues --------------------------------------------------------------

@dataclass
class LinkQueue:
    link_id: str
    queued: Deque[Tuple[float, int]] = field(default_factory=deque)  # (depart, packet id)
    busy_until: float = 0.0


def enqueue_packet(queue: LinkQueue, packet: Packet, now: float, link: Link) -> Optional[float]:
    """Drop-tail enqueue. Returns the departure time, or None when dropped."""
    q = queue.queued
    while q and q[0][0] <= now:
        q.popleft()
    if len(q) >= link.queue_limit:
        return None
    depart = max(now, queue.busy_until) + 1.0 / link.capacity
    queue.busy_until = depart
    q.append((depart, packet.id))
    return depart


# --- hosts --------------------------------------------------------------------

class HostStatus(str, Enum):
    UP = "up"
    CRASHED = "crashed"


class Outcome(str, Enum):
    ACCEPTED = "accepted"
    REFUSED_MEM = "refused_mem"
    CRASH_TRIGGERED = "crash_triggered"
    DEAD = "dead"


@dataclass
class HostState:
    node: Node
    cpu_util: float = 0.0
    status: HostStatus = HostStatus.UP
    crashed_at: Optional[float] = None
    util_history: Deque[Tuple[float, float]] = field(default_factory=lambda: deque(maxlen=64))
    processed: Deque[float] = field(default_factory=deque)
    active_flows: Dict[FlowKey, float] = field(default_factory=dict)

    @property
    def mem_used(self) -> int:
        return len(self.active_flows)

    def is_up(self, now: float) -> bool:
        if self.status is HostStatus.CRASHED and self.node.recovery_after is not None:
            if now >= self.crashed_at + self.node.recovery_after:
                self.status = HostStatus.UP
                self.crashed_at = None
        return self.status is HostStatus.UP


def _evict_idle(host: HostState, now: float) -> None:
    stale = [k for k, seen in host.active_flows.items() if now - seen >= FLOW_IDLE_TIMEOUT]
    for k in stale:
        del host.active_flows[k]


def host_process(host: HostState, packet: Packet, now: float) -> Outcome:
    if not host.is_up(now):
        return Outcome.DEAD
    host.processed.append(now)
    key = packet.flow_key
    if key not in host.active_flows:
        _evict_idle(host, now)
        if host.mem_used >= host.node.mem_slots:
            return Outcome.REFUSED_MEM
    host.active_flows[key] = now
    sig = signature_match(packet)
    if sig is not None and sig in host.node.vulnerable_to:
        host.status = HostStatus.CRASHED
        host.crashed_at = now
        host.active_flows.clear()
        host.processed.clear()
        return Outcome.CRASH_TRIGGERED
    return Outcome.ACCEPTED


def advance_host_resources(host: HostState, dt: float, now: float) -> float:
    """Recompute CPU utilization over the trailing 1 s window ``(now-1, now]``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = host.processed
    while q and q[0] <= now - CPU_WINDOW:
        q.popleft()
    _evict_idle(host, now)
    util = min(1.0, len(q) / (host.node.cpu_capacity * CPU_WINDOW))
    host.cpu_util = util
    host.util_history.append((now, util))
    return util


# --- engine -------------------------------------------------------------------

class Event(NamedTuple):
    time: float
    seq: int
    action: Callable
    args: tuple


@dataclass
class SimStats:
    injected: int = 0
    delivered: int = 0
    queue_dropped: int = 0
    filter_dropped: int = 0
    in_flight: int = 0
    delivered_dead: int = 0
    refused_mem: int = 0

    def conserved(self) -> bool:
        return self.injected == (self.delivered + self.queue_dropped
                                 + self.filter_dropped + self.in_flight)


class Engine:
    def __init__(self):
        self.now = 0.0
        self._heap: List[Event] = []
        self._seq = 0
        self.stats = SimStats()
        self.processed_events = 0

    def schedule(self, time: float, action: Callable, *args) -> int:
        if time < self.now:
            raise CausalityError(f"cannot schedule at t={time} before now={self.now}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, Event(time, seq, action, args))
        return seq

    def pending(self) -> int:
        return len(self._heap)

    def count_pending(self, action: Callable) -> int:
        return sum(1 for ev in self._heap if ev.action == action)

    def run_until(self, t_end: float) -> SimStats:
        if t_end < self.now:
            raise CausalityError(f"t_end={t_end} is before now={self.now}")
        heap = self._heap
        while heap and heap[0].time <= t_end:
            ev = heapq.heappop(heap)
            self.now = ev.time
            self.processed_events += 1
            ev.action(*ev.args)
        self.now = t_end
        return self.snapshot()

    def snapshot(self) -> SimStats:
        s = self.stats
        return SimStats(s.injected, s.delivered, s.queue_dropped, s.filter_dropped,
                        s.in_flight, s.delivered_dead, s.refused_mem)


# --- forwarding ---------------------------------------------------------------

class Network:
    """Hop-by-hop forwarding over a :class:`Topology`.

    Observers are plain callables: ``taps[node](packet, now)`` sees every
    packet arriving at ``node``; ``filters[node](packet, now)`` returns a rule
    id to drop the packet before it is queued on the outgoing link.
    """

    def __init__(self, engine: Engine, topology: Topology):
        self.engine = engine
        self.topology = topology
        self.queues: Dict[Tuple[str, str], LinkQueue] = {}
        for link in topology.links.values():
            self.queues[(link.a, link.b)] = LinkQueue(link.id)
            self.queues[(link.b, link.a)] = LinkQueue(link.id)
        self.hosts = {n.id: HostState(n) for n in topology.nodes.values()
                      if n.kind is NodeKind.HOST}
        self.taps: Dict[str, List[Callable]] = {}
        self.filters: Dict[str, Callable] = {}
        self.on_deliver: List[Callable] = []
        self.on_drop: List[Callable] = []
        self._next_id = 0

    def reserve_id(self) -> int:
        pid = self._next_id
        self._next_id += 1
        return pid

    def inject(self, packet: Packet) -> int:
        """Send ``packet`` from its source; ids reserved beforehand are kept."""
        if packet.id < 0:
            packet.id = self.reserve_id()
        stats = self.engine.stats
        stats.injected += 1
        stats.in_flight += 1
        self._arrive(packet, packet.src)
        return packet.id

    def _finish(self) -> None:
        self.engine.stats.in_flight -= 1

    def _arrive(self, packet: Packet, node: str) -> None:
        now = self.engine.now
        stats = self.engine.stats
        if node == packet.dst:
            self._finish()
            stats.delivered += 1
            host = self.hosts.get(node)
            outcome = host_process(host, packet, now) if host else Outcome.ACCEPTED
            if outcome is Outcome.DEAD:
                stats.delivered_dead += 1
            elif outcome is Outcome.REFUSED_MEM:
                stats.refused_mem += 1
            for cb in self.on_deliver:
                cb(packet, outcome, now)
            return
        for tap in self.taps.get(node, ()):
            tap(packet, now)
        filt = self.filters.get(node)
        if filt is not None:
            rule = filt(packet, now)
            if rule is not None:
                self._finish()
                stats.filter_dropped += 1
                for cb in self.on_drop:
                    cb(packet, "filter", node, rule, now)
                return
        nxt = self.topology.next_hop(node, packet.dst)
        link = self.topology.adj[node][nxt]
        depart = enqueue_packet(self.queues[(node, nxt)], packet, now, link)
        if depart is None:
            self._finish()
            stats.queue_dropped += 1
            for cb in self.on_drop:
                cb(packet, "queue", node, link.id, now)
            return
        self.engine.schedule(depart + link.latency, self._arrive, packet, nxt)

    def packets_in_transit(self) -> int:
        """Independent in-flight count: pending hop-arrival events."""
        return self.engine.count_pending(self._arrive)
