"""Trust values attached to cluster centroids in feature space.

Each detection agent owns one :class:`TrustModel`. Incoming feature vectors
are placed with leader clustering (attach to the nearest centroid within
``tau`` or open a new cluster); host-sensor feedback moves cluster trust by
exponential smoothing; reputation messages from peers are merged as weighted
means or kept apart as *shadow* clusters until seen locally.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .errors import InvalidMessageError
from .flows import FlowKey

MEMBER_RING = 64


class Label(str, Enum):
    MALICIOUS = "malicious"
    UNKNOWN = "unknown"
    BENIGN = "benign"


class Mode(str, Enum):
    INFORM = "inform"
    QUERY = "query"
    REPLY = "reply"


@dataclass(eq=False)
class TrustCluster:
    id: int
    centroid: Tuple[float, ...]
    trust: float = 0.5
    weight: int = 1
    last_seen: float = 0.0
    member_flows: Deque[FlowKey] = field(default_factory=lambda: deque(maxlen=MEMBER_RING))
    shadow: bool = False


@dataclass(frozen=True)
class FeedbackObservation:
    flow_key: FlowKey
    o: float
    source_host: str
    at: float


@dataclass(frozen=True)
class ReputationMessage:
    origin_dra: str
    centroid: Tuple[float, ...]
    trust: float = 0.5
    weight: int = 0
    mode: Mode = Mode.INFORM
    at: float = 0.0

    def to_record(self) -> Tuple:
        """Flat wire form: origin, four feature components, trust, weight, mode, time."""
        return (self.origin_dra, *(float(c) for c in self.centroid),
                float(self.trust), int(self.weight), self.mode.value, float(self.at))

    @classmethod
    def from_record(cls, rec: Iterable) -> "ReputationMessage":
        rec = list(rec)
        if len(rec) != 9:
            raise InvalidMessageError(f"reputation record needs 9 fields, got {len(rec)}")
        origin, f1, f2, f3, f4, trust, weight, mode, at = rec
        return cls(str(origin), (float(f1), float(f2), float(f3), float(f4)),
                   float(trust), int(weight), Mode(mode), float(at))


@dataclass
class FlowStatus:
    """What a DRA remembers about one reported flow."""
    flow_key: FlowKey
    cluster_id: int
    last_seen: float
    closed_at: Optional[float] = None
    reinforced: bool = False
    rates: Deque[float] = field(default_factory=lambda: deque(maxlen=3))
    size_ratio: float = 0.0


class TrustModel:
    def __init__(self, tau: float = 0.5, eta: float = 0.05, alpha: float = 0.1,
                 theta_mal: float = 0.3, theta_ben: float = 0.7):
        if not tau > 0:
            raise ValueError("tau must be positive")
        if not 0 < eta < 1:
            raise ValueError("eta must be in (0, 1)")
        if not 0 < alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= theta_mal < theta_ben <= 1:
            raise ValueError("need 0 <= theta_mal < theta_ben <= 1")
        self.tau = tau
        self.eta = eta
        self.alpha = alpha
        self.theta_mal = theta_mal
        self.theta_ben = theta_ben
        self.clusters: List[TrustCluster] = []
        self._by_id: Dict[int, TrustCluster] = {}
        self._centroids = np.empty((0, 4))
        self._next_id = 0

    def __len__(self):
        return len(self.clusters)

    def get(self, cluster_id: int) -> TrustCluster:
        try:
            return self._by_id[cluster_id]
        except KeyError:
            raise KeyError(f"unknown cluster id {cluster_id}") from None

    def _add(self, centroid, trust: float, weight: int, now: float, shadow: bool) -> TrustCluster:
        c = TrustCluster(self._next_id, tuple(float(x) for x in centroid), trust, weight,
                         now, shadow=shadow)
        self._next_id += 1
        self.clusters.append(c)
        self._by_id[c.id] = c
        self._centroids = np.vstack([self._centroids, np.asarray(c.centroid)[None, :]])
        return c

    def nearest(self, v) -> Optional[Tuple[int, float]]:
        """Euclidean nearest centroid; ties go to the lowest cluster id."""
        if not self.clusters:
            return None
        d = np.sqrt(((self._centroids - np.asarray(v, dtype=float)) ** 2).sum(axis=1))
        i = int(np.argmin(d))  # first minimum, clusters are stored in id order
        return self.clusters[i].id, float(d[i])

    def observe(self, v, flow_key: FlowKey, now: float) -> int:
        hit = self.nearest(v)
        if hit is not None and hit[1] <= self.tau:
            idx = self._index(hit[0])
            c = self.clusters[idx]
            new = tuple(ci + self.eta * (vi - ci) for ci, vi in zip(c.centroid, v))
            c.centroid = new
            self._centroids[idx] = new
            c.weight += 1
            c.member_flows.append(flow_key)
            c.last_seen = now
            c.shadow = False
            return c.id
        c = self._add(v, 0.5, 1, now, shadow=False)
        c.member_flows.append(flow_key)
        return c.id

    def _index(self, cluster_id: int) -> int:
        # ids are assigned 0, 1, 2... in insertion order and never removed
        self.get(cluster_id)
        return cluster_id

    def update_trust(self, cluster_id: int, o: float) -> float:
        if not 0.0 <= o <= 1.0:
            raise ValueError(f"observation {o} outside [0, 1]")
        c = self.get(cluster_id)
        # clamp absorbs the last-ulp overshoot of (1 - alpha) + alpha
        c.trust = min(1.0, max(0.0, (1 - self.alpha) * c.trust + self.alpha * o))
        return c.trust

    def classify(self, cluster_id: int) -> Label:
        t = self.get(cluster_id).trust
        if t < self.theta_mal:
            return Label.MALICIOUS
        if t > self.theta_ben:
            return Label.BENIGN
        return Label.UNKNOWN

    def merge_reputation(self, msg: ReputationMessage) -> int:
        if msg.mode is Mode.QUERY:
            raise InvalidMessageError("queries carry no evidence to merge")
        if msg.weight < 1:
            raise InvalidMessageError(f"reputation weight {msg.weight} < 1")
        if not 0.0 <= msg.trust <= 1.0:
            raise InvalidMessageError(f"reputation trust {msg.trust} outside [0, 1]")
        hit = self.nearest(msg.centroid)
        if hit is not None and hit[1] <= self.tau:
            c = self.get(hit[0])
            total = c.weight + msg.weight
            c.trust = (c.trust * c.weight + msg.trust * msg.weight) / total
            c.weight = total
            return c.id
        return self._add(msg.centroid, msg.trust, msg.weight, msg.at, shadow=True).id

    def answer_query(self, centroid) -> Optional[Tuple[float, int]]:
        hit = self.nearest(centroid)
        if hit is None or hit[1] > self.tau:
            return None
        c = self.get(hit[0])
        return c.trust, c.weight


def brute_force_nearest(clusters: List[TrustCluster], v) -> Optional[Tuple[int, float]]:
    """Reference linear scan, kept independent of :meth:`TrustModel.nearest`."""
    best = None
    for c in clusters:
        d = math.dist(c.centroid, v)
        if best is None or d < best[1] or (d == best[1] and c.id < best[0]):
            best = (c.id, d)
    return best


def aggregate_feedback(alarms, flows: Iterable[FlowStatus], now: float,
                       horizon: float = 5.0) -> List[FeedbackObservation]:
    """Turn recent host alarms into per-flow trust observations.

    Flows toward a host that alarmed within ``horizon`` get
    ``o = max(0, 1 - sum of that host's severities)``. Flows that closed
    cleanly toward an unalarmed host get ``o = 1`` once.
    """
    severity: Dict[str, float] = {}
    for a in alarms:
        if now - horizon <= a.at <= now:
            severity[a.host] = severity.get(a.host, 0.0) + a.severity
    out = []
    for f in flows:
        dst = f.flow_key.dst
        if dst in severity:
            out.append(FeedbackObservation(f.flow_key, max(0.0, 1.0 - severity[dst]), dst, now))
        elif f.closed_at is not None and not f.reinforced:
            out.append(FeedbackObservation(f.flow_key, 1.0, dst, now))
    return out
