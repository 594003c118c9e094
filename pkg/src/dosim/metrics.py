"""Run-level metrics computed from an event log plus the scenario that produced it.

All definitions are this artifact's own:

* ``detection_latency``: first attack start to the first *malicious*
  classification of a cluster whose members are mostly attack flows.
* ``mitigation_latency``: first attack start to the first rule install.
* ``false_positive_rate``: legitimate flows that lost at least one packet to a
  filter rule, over all legitimate flows.
* ``goodput_ratio``: legitimate packets accepted by their destination over
  the packets the senders would have offered at full rate, grouped by the
  time each packet was created. Phases split at the attack start and the
  first rule install.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, fields
from typing import Dict, Iterable, List, Optional, Tuple

from .eventlog import EventLog
from .scenario import Scenario


@dataclass(frozen=True)
class GoodputRatio:
    before: float
    during: float
    after: float


@dataclass(frozen=True)
class Conservation:
    injected: int
    delivered: int
    queue_dropped: int
    filter_dropped: int
    in_flight: int


@dataclass(frozen=True)
class MetricsReport:
    detection_latency: Optional[float]
    mitigation_latency: Optional[float]
    false_positive_rate: float
    goodput_ratio: GoodputRatio
    conservation: Conservation
    alarms: int
    rules: int


# --- log views ----------------------------------------------------------------------

def attack_start(scenario: Scenario) -> Optional[float]:
    starts = [a.start for a in scenario.attacks if a.start < scenario.duration]
    return min(starts) if starts else None


def attack_stop(scenario: Scenario) -> Optional[float]:
    stops = [scenario.duration if a.stop is None else min(a.stop, scenario.duration)
             for a in scenario.attacks if a.start < scenario.duration]
    return max(stops) if stops else None


def flow_truth(log: EventLog) -> Dict[str, bool]:
    """flow label -> True when most of its packets carried an attack tag."""
    return {r["flow"]: r["attack"] > r["legit"] for r in log.of("flow")}


def legit_flows(log: EventLog) -> List[str]:
    return sorted(r["flow"] for r in log.of("flow") if r["legit"] > 0)


def rule_installs(log: EventLog, include_refresh: bool = False):
    return [r for r in log.of("rule-install") if include_refresh or not r["refreshed"]]


def first_install(log: EventLog, after: float = 0.0) -> Optional[float]:
    for r in rule_installs(log):
        if r.t >= after:
            return r.t
    return None


def attack_clusters(log: EventLog) -> List:
    """Malicious classification records whose member flows are mostly attack flows."""
    truth = flow_truth(log)
    out = []
    for r in log.of("classify"):
        if r["label"] != "malicious" or not r["members"]:
            continue
        members = r["members"].split(";")
        attacks = sum(1 for m in members if truth.get(m, False))
        if attacks * 2 > len(members):
            out.append(r)
    return out


def phases(log: EventLog, scenario: Scenario) -> Dict[str, Tuple[float, float]]:
    dur = scenario.duration
    start = attack_start(scenario)
    if start is None:
        return {"before": (0.0, dur / 3), "during": (dur / 3, 2 * dur / 3),
                "after": (2 * dur / 3, dur)}
    end = first_install(log, start)
    if end is None:
        end = attack_stop(scenario)
    return {"before": (0.0, start), "during": (start, end), "after": (end, dur)}


def offered(scenario: Scenario, t0: float, t1: float) -> float:
    """Packets legitimate senders would create in [t0, t1) at their full rate."""
    total = 0.0
    for s in scenario.legit_senders:
        stop = scenario.duration if s.stop is None else min(s.stop, scenario.duration)
        overlap = min(stop, t1) - max(s.start, t0)
        if overlap > 0:
            total += s.max_rate * overlap
    return total


def legit_accepted_times(log: EventLog) -> List[float]:
    return [r["created"] for r in log.of("deliver")
            if r["tag"] is None and r["outcome"] == "accepted"]


def goodput_between(log: EventLog, scenario: Scenario, t0: float, t1: float,
                    created: Optional[List[float]] = None) -> float:
    demand = offered(scenario, t0, t1)
    if demand <= 0:
        return 1.0
    times = legit_accepted_times(log) if created is None else created
    got = sum(1 for c in times if t0 <= c < t1)
    return min(1.0, got / demand)


def goodput_series(log: EventLog, scenario: Scenario, step: float = 1.0) -> List[Tuple[float, float]]:
    created = legit_accepted_times(log)
    out = []
    t = 0.0
    while t < scenario.duration - 1e-9:
        out.append((t, goodput_between(log, scenario, t, t + step, created)))
        t += step
    return out


# --- report -------------------------------------------------------------------------

def compute_metrics(log: EventLog, scenario: Scenario) -> MetricsReport:
    start = attack_start(scenario)
    detection = mitigation = None
    if start is not None:
        hits = [r.t for r in attack_clusters(log) if r.t >= start]
        if hits:
            detection = hits[0] - start
        inst = first_install(log, start)
        if inst is not None:
            mitigation = inst - start

    legit = legit_flows(log)
    blocked = {r["flow"] for r in log.of("rule-drop") if r["tag"] is None}
    fpr = (len(blocked & set(legit)) / len(legit)) if legit else 0.0

    created = legit_accepted_times(log)
    ph = phases(log, scenario)
    goodput = GoodputRatio(*(goodput_between(log, scenario, *ph[k], created)
                             for k in ("before", "during", "after")))

    st = log.of("stats")[-1]
    cons = Conservation(st["injected"], st["delivered"], st["queue_dropped"],
                        st["filter_dropped"], st["in_flight"])
    return MetricsReport(detection, mitigation, fpr, goodput, cons,
                         len(log.of("alarm")), len(rule_installs(log)))


def _flatten(obj, prefix: str = "") -> List[Tuple[str, object]]:
    out = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        name = prefix + f.name
        if hasattr(v, "__dataclass_fields__"):
            out.extend(_flatten(v, name + "."))
        else:
            out.append((name, v))
    return out


def _cell(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _json_value(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _json_lines(obj, indent: int) -> List[str]:
    pad = "  " * indent
    items = [(f.name, getattr(obj, f.name)) for f in fields(obj)]
    lines = []
    for i, (name, v) in enumerate(items):
        comma = "," if i < len(items) - 1 else ""
        if hasattr(v, "__dataclass_fields__"):
            lines.append(f'{pad}"{name}": {{')
            lines.extend(_json_lines(v, indent + 1))
            lines.append(f"{pad}}}{comma}")
        else:
            lines.append(f'{pad}"{name}": {_json_value(v)}{comma}')
    return lines


def emit_report(report: MetricsReport, fmt: str = "csv") -> bytes:
    if fmt == "csv":
        flat = _flatten(report)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([k for k, _ in flat])
        w.writerow([_cell(v) for _, v in flat])
        return buf.getvalue().encode()
    if fmt in ("json", "json_like"):
        return ("{\n" + "\n".join(_json_lines(report, 1)) + "\n}\n").encode()
    raise ValueError(f"unknown report format {fmt!r}")


def decision_records(log: EventLog) -> List[Tuple]:
    """Agent decisions with ground-truth fields removed, for tag-blindness checks."""
    return log.decisions(drop_fields=("tag",))
