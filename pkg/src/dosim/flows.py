"""Per-flow accounting and feature extraction performed by network sensors.

A sensor keeps one :class:`FlowTable` for the traffic crossing its vantage
node. Packets are counted into fixed windows (default 1 s, split into ten
subwindows); at each window boundary every active flow is reduced to a
four-component :class:`FeatureVector`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Set

from .errors import WindowError
from .kinds import Proto

N_SUBWINDOWS = 10
MTU = 1500.0


class FlowKey(NamedTuple):
    src: str
    dst: str
    proto: Proto


class FeatureVector(NamedTuple):
    log_rate: float
    size_ratio: float
    burstiness: float
    fan_in: float


@dataclass
class WindowStats:
    flow_key: FlowKey
    window_start: float
    window_len: float = 1.0
    pkt_count: int = 0
    byte_sum: int = 0
    subwindow_counts: List[int] = field(default_factory=lambda: [0] * N_SUBWINDOWS)
    dst_fanin: int = 1


class ClosedWindow(NamedTuple):
    reports: List[tuple]  # (FlowKey, FeatureVector)
    closed: List[FlowKey]


class FlowTable:
    """Flow bookkeeping owned by a single network sensor."""

    def __init__(self, window_start: float = 0.0, window_len: float = 1.0,
                 idle_timeout: float = 5.0):
        if window_len <= 0:
            raise ValueError("window_len must be positive")
        self.window_start = window_start
        self.window_len = window_len
        self.idle_timeout = idle_timeout
        self.live: Dict[FlowKey, WindowStats] = {}
        self.last_seen: Dict[FlowKey, float] = {}
        self._dst_sources: Dict[str, Set[str]] = {}
        self._dst_flows: Dict[str, List[FlowKey]] = {}

    @property
    def window_end(self) -> float:
        return self.window_start + self.window_len


def update_flow(table: FlowTable, packet, now: float) -> WindowStats:
    """Count ``packet`` into the live window of its flow and return the stats."""
    offset = now - table.window_start
    if offset < 0 or offset >= table.window_len:
        raise WindowError(
            f"packet at t={now} outside window "
            f"[{table.window_start}, {table.window_end})")
    key = packet.flow_key
    stats = table.live.get(key)
    if stats is None:
        stats = WindowStats(key, table.window_start, table.window_len)
        table.live[key] = stats
        table._dst_flows.setdefault(key.dst, []).append(key)
    idx = min(N_SUBWINDOWS - 1, int(N_SUBWINDOWS * offset / table.window_len))
    stats.subwindow_counts[idx] += 1
    stats.pkt_count += 1
    stats.byte_sum += packet.size
    table.last_seen[key] = now

    sources = table._dst_sources.setdefault(key.dst, set())
    if key.src not in sources:
        sources.add(key.src)
        fanin = len(sources)
        for other in table._dst_flows[key.dst]:
            table.live[other].dst_fanin = fanin
    return stats


def extract_features(stats: WindowStats) -> FeatureVector:
    if stats.pkt_count < 1:
        raise ValueError("cannot extract features from an empty window")
    n = stats.pkt_count
    # integer numerator keeps the peak/mean ratio exact at both ends of [1, 10]
    return FeatureVector(
        math.log1p(n / stats.window_len),
        (stats.byte_sum / n) / MTU,
        max(stats.subwindow_counts) * N_SUBWINDOWS / n,
        math.log1p(stats.dst_fanin),
    )


def close_window(table: FlowTable, now: float) -> ClosedWindow:
    """Emit one vector per active flow, evict idle flows, start a new window at ``now``."""
    if now < table.window_end - 1e-9:
        raise WindowError(f"window ending at {table.window_end} still open at t={now}")
    reports = [(key, extract_features(stats))
               for key, stats in sorted(table.live.items())
               if stats.pkt_count >= 1]
    closed = sorted(key for key, seen in table.last_seen.items()
                    if now - seen >= table.idle_timeout)
    for key in closed:
        del table.last_seen[key]
    table.live.clear()
    table._dst_sources.clear()
    table._dst_flows.clear()
    table.window_start = now
    return ClosedWindow(reports, closed)
