"""Traffic sources: the attack generator catalog and congestion-responsive
legitimate senders."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, NamedTuple, Optional, Tuple

from .kinds import AttackKind, Proto
from .sim_core import Packet

POD_SIZE = 70000


class AttackType(str, Enum):
    DISTRIBUTED = "distributed"
    NON_DISTRIBUTED = "non_distributed"


class Direction(str, Enum):
    NETWORK = "network_resources"
    TARGET = "target_resources"


class Scheme(str, Enum):
    DIRECT = "direct"
    REFLECTOR = "reflector"
    HIDDEN = "hidden"


class Method(str, Enum):
    TARGETED = "targeted"
    CONSUMPTION = "consumption"
    EXPLOITIVE = "exploitive"


class AttackTaxonomy(NamedTuple):
    attack_type: AttackType
    direction: Direction
    scheme: Scheme
    method: Method


_FLOOD = AttackTaxonomy(AttackType.DISTRIBUTED, Direction.NETWORK, Scheme.DIRECT, Method.CONSUMPTION)
_REFLECT = AttackTaxonomy(AttackType.DISTRIBUTED, Direction.NETWORK, Scheme.REFLECTOR,
                          Method.CONSUMPTION)
_EXPLOIT = AttackTaxonomy(AttackType.NON_DISTRIBUTED, Direction.TARGET, Scheme.DIRECT,
                          Method.EXPLOITIVE)
_LOWRATE = AttackTaxonomy(AttackType.DISTRIBUTED, Direction.TARGET, Scheme.HIDDEN, Method.CONSUMPTION)

TAXONOMY: Dict[AttackKind, AttackTaxonomy] = {
    AttackKind.UdpFlood: _FLOOD,
    AttackKind.IcmpFlood: _FLOOD,
    AttackKind.Smurf: _REFLECT,
    AttackKind.Fraggle: _REFLECT,
    AttackKind.PingOfDeath: _EXPLOIT,
    AttackKind.Land: _EXPLOIT,
    AttackKind.Shrew: _LOWRATE,
    AttackKind.RoQ: _LOWRATE,
}

PROTO: Dict[AttackKind, Proto] = {
    AttackKind.UdpFlood: Proto.UDP,
    AttackKind.IcmpFlood: Proto.ICMP,
    AttackKind.Smurf: Proto.ICMP,
    AttackKind.Fraggle: Proto.UDP,
    AttackKind.PingOfDeath: Proto.ICMP,
    AttackKind.Land: Proto.TCPLIKE,
    AttackKind.Shrew: Proto.UDP,
    AttackKind.RoQ: Proto.UDP,
}


def taxonomy_of(kind: AttackKind) -> AttackTaxonomy:
    return TAXONOMY[AttackKind(kind)]


@dataclass(frozen=True)
class Burst:
    period: float
    length: float
    burst_rate: float

    def __post_init__(self):
        if not 0 < self.length < self.period:
            raise ValueError("burst needs 0 < length < period")
        if not self.burst_rate > 0:
            raise ValueError("burst_rate must be positive")

    @property
    def average_rate(self) -> float:
        return self.burst_rate * self.length / self.period


@dataclass
class GeneratorState:
    kind: AttackKind
    sources: List[str]
    victim: str
    start: float
    stop: float
    rate: float = 0.0
    reflectors: List[str] = field(default_factory=list)
    burst: Optional[Burst] = None
    size: int = 500
    repeat: float = 0.0  # exploit resend interval, 0 = single shot
    step: int = 0
    emitted: int = 0

    def __post_init__(self):
        self.kind = AttackKind(self.kind)
        if not self.sources:
            raise ValueError("generator needs at least one source")
        reflecting = taxonomy_of(self.kind).scheme is Scheme.REFLECTOR
        if reflecting != bool(self.reflectors):
            raise ValueError(f"{self.kind.value}: reflectors required iff the scheme is reflector")
        if self.kind in (AttackKind.Shrew, AttackKind.RoQ) and self.burst is None:
            raise ValueError(f"{self.kind.value} needs a burst profile")
        if self.kind not in (AttackKind.Shrew, AttackKind.RoQ, AttackKind.PingOfDeath,
                             AttackKind.Land) and not self.rate > 0:
            raise ValueError(f"{self.kind.value} needs a positive rate")


Emission = Tuple[List[Packet], Optional[float]]


def _packet(gen: GeneratorState, src: str, dst: str, now: float, **kw) -> Packet:
    return Packet(src, dst, PROTO[gen.kind], kw.pop("size", gen.size), now,
                  attack_tag=gen.kind, **kw)


def _next(gen: GeneratorState, t: float) -> Optional[float]:
    return t if t < gen.stop else None


def flood_emit(gen: GeneratorState, now: float) -> Emission:
    """One packet from the next source in rotation; every source ends up
    sending at ``rate/len(sources)`` evenly spaced."""
    if not gen.start <= now < gen.stop:
        return [], None
    src = gen.sources[gen.step % len(gen.sources)]
    gen.step += 1
    return [_packet(gen, src, gen.victim, now)], _next(gen, gen.start + gen.step / gen.rate)


def reflector_emit(gen: GeneratorState, now: float) -> Emission:
    """One trigger: an echo request to every reflector, spoofed from the victim."""
    if not gen.start <= now < gen.stop:
        return [], None
    src = gen.sources[gen.step % len(gen.sources)]
    gen.step += 1
    pkts = [_packet(gen, src, r, now, spoofed_src=gen.victim, echo_request=True)
            for r in gen.reflectors]
    return pkts, _next(gen, gen.start + gen.step / gen.rate)


def reflect(packet: Packet, reflector: str, now: float) -> Packet:
    """Reply a reflector sends for an accepted echo request (amplification 1)."""
    return Packet(reflector, packet.effective_src, packet.proto, packet.size, now,
                  attack_tag=packet.attack_tag)


def shrew_schedule(burst: Burst, start: float, now: float) -> float:
    """Instantaneous attack rate of a square-wave burst train."""
    return burst.burst_rate if (now - start) % burst.period < burst.length else 0.0


def burst_quota(burst: Burst, k: int) -> int:
    """Packets emitted by the first ``k`` bursts. Counting cumulatively keeps
    the total within one packet of ``k * burst_rate * length``."""
    return math.floor(k * burst.burst_rate * burst.length + 1e-9)


def _burst_slot(burst: Burst, index: int) -> Tuple[int, int]:
    """(burst number, position inside it) of the ``index``-th packet."""
    k = max(0, int(index // (burst.burst_rate * burst.length)) - 1)
    while burst_quota(burst, k + 1) <= index:
        k += 1
    return k, index - burst_quota(burst, k)


def first_emission(gen: GeneratorState) -> Optional[float]:
    """Time of the generator's first packet, or None if it never sends."""
    t = gen.start
    if gen.burst is not None:
        k, j = _burst_slot(gen.burst, 0)
        t = gen.start + k * gen.burst.period + j / gen.burst.burst_rate
    return _next(gen, t)


def burst_emit(gen: GeneratorState, now: float) -> Emission:
    if not gen.start <= now < gen.stop:
        return [], None
    b = gen.burst
    src = gen.sources[gen.step % len(gen.sources)]
    gen.step += 1
    k, j = _burst_slot(b, gen.step)
    return ([_packet(gen, src, gen.victim, now)],
            _next(gen, gen.start + k * b.period + j / b.burst_rate))


def exploit_emit(gen: GeneratorState, now: float) -> Emission:
    if not gen.start <= now < gen.stop:
        return [], None
    src = gen.sources[gen.step % len(gen.sources)]
    gen.step += 1
    if gen.kind is AttackKind.PingOfDeath:
        pkt = _packet(gen, src, gen.victim, now, size=POD_SIZE)
    else:
        pkt = _packet(gen, src, gen.victim, now, spoofed_src=gen.victim)
    nxt = _next(gen, gen.start + gen.step * gen.repeat) if gen.repeat > 0 else None
    return [pkt], nxt


def emit(gen: GeneratorState, now: float) -> Emission:
    scheme = taxonomy_of(gen.kind).scheme
    if gen.kind in (AttackKind.PingOfDeath, AttackKind.Land):
        out = exploit_emit(gen, now)
    elif scheme is Scheme.REFLECTOR:
        out = reflector_emit(gen, now)
    elif gen.burst is not None:
        out = burst_emit(gen, now)
    else:
        out = flood_emit(gen, now)
    gen.emitted += len(out[0])
    return out


# --- legitimate senders -------------------------------------------------------------

class AimdEvent(str, Enum):
    ACK_INTERVAL = "ack_interval"
    DROP = "drop"
    WINDOW_LOSS = "window_loss"


SPAN = 0.1


@dataclass
class AimdSender:
    """Rate-based additive-increase / multiplicative-decrease source."""
    src: str
    dst: str
    rate: float
    min_rate: float = 1.0
    max_rate: float = 10.0
    additive_step: float = 10.0
    rto: float = 1.0
    paused_until: float = 0.0
    size: int = 1000
    start: float = 0.0
    stop: float = math.inf
    last_change: float = 0.0
    last_decrease: float = -math.inf
    sent: Deque[Tuple[float, int]] = field(default_factory=deque)
    dropped: set = field(default_factory=set)

    def __post_init__(self):
        if not 0 < self.min_rate <= self.max_rate:
            raise ValueError("need 0 < min_rate <= max_rate")
        self.rate = min(self.max_rate, max(self.min_rate, self.rate))
        self.last_change = self.start

    @property
    def demand(self) -> float:
        return self.max_rate

    def paused(self, now: float) -> bool:
        return now < self.paused_until

    def record_send(self, t: float, pkt_id: int) -> None:
        self.sent.append((t, pkt_id))
        while self.sent and self.sent[0][0] < t - 1.0:
            _, old = self.sent.popleft()
            self.dropped.discard(old)

    def classify_drop(self, pkt_id: int, t_sent: float) -> AimdEvent:
        """A drop is a window loss when every packet sent in the 100 ms span
        ending at the lost packet's send time was dropped."""
        self.dropped.add(pkt_id)
        span = [pid for t, pid in self.sent if t_sent - SPAN < t <= t_sent]
        if span and all(pid in self.dropped for pid in span):
            return AimdEvent.WINDOW_LOSS
        return AimdEvent.DROP


def aimd_step(sender: AimdSender, event: AimdEvent, now: float) -> float:
    """Apply one congestion signal. For a window loss ``now`` is the time the
    lost packet was sent: the retransmission timer runs from transmission."""
    if event is AimdEvent.ACK_INTERVAL:
        sender.rate = min(sender.max_rate, sender.rate + sender.additive_step)
    elif event is AimdEvent.DROP:
        sender.rate = max(sender.min_rate, sender.rate / 2)
        sender.last_decrease = now
    elif event is AimdEvent.WINDOW_LOSS:
        sender.rate = sender.min_rate
        sender.paused_until = now + sender.rto
        sender.last_decrease = now
        # the ack clock restarts when sending resumes
        sender.last_change = sender.paused_until
        return sender.rate
    else:
        raise ValueError(f"unknown AIMD event {event!r}")
    sender.last_change = now
    return sender.rate
