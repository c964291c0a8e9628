"""Request/response envelopes for the six external tools.

Every call is one versioned envelope each way. The request digest is the
cache key, the fixture key, and the trace identifier, so envelope
construction and canonicalization must stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..errors import ProtocolViolation
from .canonical import digest_value

TOOL_KINDS = ("detect", "image_search", "text_search", "embed", "enhance", "reason")
REASON_MODES = ("candidates", "cues", "answer")
RESPONSE_STATUSES = ("ok", "tool_error", "timeout")
PROTOCOL_VERSION = "1"
VERSION_HEADER = "X-Protocol-Version"


@dataclass(frozen=True)
class ToolRequest:
    kind: str
    body: dict
    version: str = PROTOCOL_VERSION

    def __post_init__(self):
        if self.kind not in TOOL_KINDS:
            raise ProtocolViolation(f"unknown tool kind: {self.kind!r}")
        if self.version != PROTOCOL_VERSION:
            raise ProtocolViolation(
                f"request speaks protocol {self.version!r}, engine speaks {PROTOCOL_VERSION!r}"
            )
        if not isinstance(self.body, dict):
            raise ProtocolViolation("request body must be a JSON object")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "version": self.version, "body": self.body}

    @classmethod
    def from_dict(cls, d: dict) -> "ToolRequest":
        try:
            return cls(kind=d["kind"], body=d["body"], version=d["version"])
        except KeyError as exc:
            raise ProtocolViolation(f"request envelope missing field {exc}") from exc


def canonical_digest(request: ToolRequest) -> str:
    """Content digest of a request; equal logical requests collide on purpose."""
    return digest_value(request.to_dict())


@dataclass(frozen=True)
class ToolResponse:
    kind: str
    status: str
    body: dict
    latency_ms: float = 0.0

    def __post_init__(self):
        if self.kind not in TOOL_KINDS:
            raise ProtocolViolation(f"unknown tool kind: {self.kind!r}")
        if self.status not in RESPONSE_STATUSES:
            raise ProtocolViolation(f"unknown response status: {self.status!r}")
        if not isinstance(self.body, dict):
            raise ProtocolViolation("response body must be a JSON object")
        if self.latency_ms < 0:
            raise ProtocolViolation("latency_ms must be >= 0")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "status": self.status,
            "body": self.body,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolResponse":
        try:
            return cls(
                kind=d["kind"],
                status=d["status"],
                body=d["body"],
                latency_ms=float(d.get("latency_ms", 0.0)),
            )
        except KeyError as exc:
            raise ProtocolViolation(f"response envelope missing field {exc}") from exc


def error_body(code: str, message: str, retryable: Optional[bool] = None) -> dict:
    out: dict = {"code": code, "message": message}
    if retryable is not None:
        out["retryable"] = retryable
    return out


@dataclass(frozen=True)
class ToolBudget:
    """Per-query bounds on the tool layer."""

    max_calls_per_query: int = 64
    per_call_timeout_ms: int = 30_000
    max_retries: int = 2
    backoff_base_ms: int = 250

    def __post_init__(self):
        if self.max_calls_per_query < 1:
            raise ValueError("max_calls_per_query must be positive")
        if self.per_call_timeout_ms < 1:
            raise ValueError("per_call_timeout_ms must be positive")
        if not (0 <= self.max_retries <= 5):
            raise ValueError("max_retries must be in [0, 5]")
        if self.backoff_base_ms < 1:
            raise ValueError("backoff_base_ms must be positive")

    def to_dict(self) -> dict:
        return {
            "max_calls_per_query": self.max_calls_per_query,
            "per_call_timeout_ms": self.per_call_timeout_ms,
            "max_retries": self.max_retries,
            "backoff_base_ms": self.backoff_base_ms,
        }


class CallMeter:
    """Counts logical tool calls for one query against a fixed budget.

    Cache hits count too: the budget bounds the reasoning loop's appetite,
    not the network, so a warm and a cold cache behave identically.
    """

    def __init__(self, max_calls: int):
        self.max_calls = max_calls
        self.used = 0

    def charge(self) -> None:
        from ..errors import BudgetExceeded

        if self.used >= self.max_calls:
            raise BudgetExceeded(f"tool-call budget of {self.max_calls} exhausted")
        self.used += 1
