"""Append-only reasoning trace: one record per tool attempt, stage
transition, and loop decision.

Timestamps are a monotone per-trace sequence counter rather than wall-clock
readings, so a replayed run emits byte-identical events. Event order still
equals emission order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

STAGES = ("1", "2", "3", "control")
OUTCOMES = ("ok", "error", "cache_hit", "skipped_toggle")


@dataclass(frozen=True)
class TraceEvent:
    timestamp: int
    stage: str
    tool: Optional[str]
    digest: Optional[str]
    outcome: str
    summary: dict

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown trace stage: {self.stage}")
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown trace outcome: {self.outcome}")

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "stage": self.stage,
            "tool": self.tool,
            "digest": self.digest,
            "outcome": self.outcome,
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEvent":
        return cls(
            timestamp=int(d["timestamp"]),
            stage=d["stage"],
            tool=d.get("tool"),
            digest=d.get("digest"),
            outcome=d["outcome"],
            summary=d.get("summary", {}),
        )


class ReasoningTrace:
    """Single-writer event log for one query run."""

    def __init__(self):
        self._events: list[TraceEvent] = []

    def emit(
        self,
        stage: str,
        outcome: str,
        summary: Optional[dict] = None,
        tool: Optional[str] = None,
        digest: Optional[str] = None,
    ) -> TraceEvent:
        event = TraceEvent(
            timestamp=len(self._events),
            stage=stage,
            tool=tool,
            digest=digest,
            outcome=outcome,
            summary=summary or {},
        )
        self._events.append(event)
        return event

    @property
    def events(self) -> tuple[TraceEvent, ...]:
        return tuple(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def tool_calls(self, kind: Optional[str] = None) -> list[TraceEvent]:
        """Logical tool-call events (first attempt, cache hits included)."""
        out = []
        for e in self._events:
            if e.tool is None or e.outcome == "skipped_toggle":
                continue
            if e.summary.get("attempt", 1) != 1:
                continue
            if kind is None or e.tool == kind:
                out.append(e)
        return out

    def attempts(self, kind: Optional[str] = None) -> list[TraceEvent]:
        """Every transport attempt event, including retries."""
        return [
            e
            for e in self._events
            if e.tool is not None
            and e.outcome in ("ok", "error")
            and "attempt" in e.summary
            and (kind is None or e.tool == kind)
        ]

    def to_dict(self) -> dict:
        return {"events": [e.to_dict() for e in self._events]}

    @classmethod
    def from_dict(cls, d: dict) -> "ReasoningTrace":
        trace = cls()
        trace._events = [TraceEvent.from_dict(e) for e in d["events"]]
        return trace

    def write_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self._events:
                fh.write(json.dumps(e.to_dict(), sort_keys=True, separators=(",", ":")))
                fh.write("\n")

    @classmethod
    def read_jsonl(cls, path: str) -> "ReasoningTrace":
        trace = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    trace._events.append(TraceEvent.from_dict(json.loads(line)))
        return trace
