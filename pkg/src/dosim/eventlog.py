"""Append-only event log; its SHA-256 is the run's determinism fingerprint."""

from __future__ import annotations

import hashlib
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

# Records that reflect a decision taken by an agent (as opposed to physics).
DECISION_KINDS = ("alarm", "reputation", "classify", "rule-install", "rule-drop", "agent-error")


class LogRecord(NamedTuple):
    t: float
    kind: str
    fields: Tuple[Tuple[str, object], ...]

    def get(self, key: str, default=None):
        for k, v in self.fields:
            if k == key:
                return v
        return default

    def __getitem__(self, key):
        if isinstance(key, str):
            for k, v in self.fields:
                if k == key:
                    return v
            raise KeyError(key)
        return tuple.__getitem__(self, key)

    def render(self) -> str:
        return f"{self.t:.6f} {self.kind} " + " ".join(
            f"{k}={_fmt(v)}" for k, v in self.fields)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


class EventLog:
    def __init__(self):
        self.records: List[LogRecord] = []

    def add(self, t: float, kind: str, /, **fields) -> None:
        self.records.append(LogRecord(t, kind, tuple(fields.items())))

    def __iter__(self) -> Iterator[LogRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def of(self, *kinds: str) -> List[LogRecord]:
        return [r for r in self.records if r.kind in kinds]

    def first(self, kind: str) -> Optional[LogRecord]:
        for r in self.records:
            if r.kind == kind:
                return r
        return None

    def lines(self) -> Iterator[str]:
        for r in self.records:
            yield r.render()

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def decisions(self, drop_fields: Sequence[str] = ()) -> List[Tuple]:
        """Agent decision records, optionally without some fields (e.g. ground truth)."""
        return [(r.t, r.kind, tuple((k, v) for k, v in r.fields if k not in drop_fields))
                for r in self.records if r.kind in DECISION_KINDS]
