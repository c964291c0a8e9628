"""The call layer every stage goes through: validation, cache, retries,
budget accounting, and trace emission.

Retry policy: timeouts, transport failures, and tool errors flagged
retryable are retried under exponential backoff (backoff_base x 2^attempt);
definitive tool errors and schema violations are not.
"""

from __future__ import annotations

import time
from typing import Callable, Optional

from ..errors import ProtocolViolation, ToolUnavailable
from ..trace import ReasoningTrace
from .cache import ResponseCache
from .protocol import CallMeter, ToolBudget, ToolRequest, ToolResponse, canonical_digest
from .schemas import validate_request, validate_response
from .transport import Transport, TransportError


class ToolClient:
    def __init__(
        self,
        transport: Transport,
        budget: ToolBudget,
        cache: Optional[ResponseCache] = None,
        sleep: Callable[[float], None] = time.sleep,
        health_threshold_ms: float = 1000.0,
    ):
        self.transport = transport
        self.budget = budget
        self.cache = cache
        self.sleep = sleep
        self.health_threshold_ms = health_threshold_ms

    def call(
        self,
        kind: str,
        body: dict,
        meter: Optional[CallMeter] = None,
        trace: Optional[ReasoningTrace] = None,
        stage: str = "control",
    ) -> dict:
        """One logical tool call; returns the ok response body."""
        request = ToolRequest(kind=kind, body=body)
        validate_request(request)
        digest = canonical_digest(request)
        if meter is not None:
            meter.charge()

        if self.cache is not None:
            cached = self.cache.get(digest)
            if cached is not None:
                if trace is not None:
                    trace.emit(stage, "cache_hit", {"attempt": 1}, tool=kind, digest=digest)
                return cached.body

        timeout_s = self.budget.per_call_timeout_ms / 1000.0
        last_failure = "no attempt made"
        attempts = 0
        for attempt in range(self.budget.max_retries + 1):
            if attempt > 0:
                self.sleep((self.budget.backoff_base_ms / 1000.0) * (2 ** (attempt - 1)))
            attempts += 1
            try:
                response = self.transport.send(request, timeout_s)
            except TransportError as exc:
                last_failure = str(exc)
                if trace is not None:
                    trace.emit(
                        stage,
                        "error",
                        {"attempt": attempts, "status": "transport", "detail": str(exc)},
                        tool=kind,
                        digest=digest,
                    )
                continue
            validate_response(request, response)
            if response.ok:
                if trace is not None:
                    trace.emit(
                        stage,
                        "ok",
                        {"attempt": attempts, "latency_ms": response.latency_ms},
                        tool=kind,
                        digest=digest,
                    )
                if self.cache is not None:
                    self.cache.put(digest, response)
                return response.body
            last_failure = f"{response.status}: {response.body.get('message', '')}"
            if trace is not None:
                trace.emit(
                    stage,
                    "error",
                    {"attempt": attempts, "status": response.status},
                    tool=kind,
                    digest=digest,
                )
            retryable = response.status == "timeout" or (
                response.status == "tool_error" and response.body.get("retryable") is True
            )
            if not retryable:
                raise ToolUnavailable(f"{kind} tool failed ({last_failure})", attempts=attempts)
        raise ToolUnavailable(
            f"{kind} tool unavailable after {attempts} attempts ({last_failure})",
            attempts=attempts,
        )

    def health_check(self, kind: str) -> dict:
        """Ping classification: ok under the latency threshold, degraded
        above it, down when the ping fails."""
        try:
            ok, rtt_ms = self.transport.ping()
        except Exception as exc:  # noqa: BLE001 - a dead transport is a value here
            return {"kind": kind, "state": "down", "rtt_ms": None, "detail": str(exc)}
        if not ok:
            return {"kind": kind, "state": "down", "rtt_ms": rtt_ms}
        state = "ok" if rtt_ms <= self.health_threshold_ms else "degraded"
        return {"kind": kind, "state": state, "rtt_ms": rtt_ms}


def validation_error_message(exc: ProtocolViolation) -> str:
    return str(exc)
