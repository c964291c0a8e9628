"""Conformance suite for tool endpoints.

Runs a fixed set of golden requests against a transport and checks that
every response satisfies the wire contract: envelope shape, per-kind body
schema, unit-norm embeddings, and deterministic replies to identical
requests. The same suite backs ``kfra tools check`` and the server test
suites, so an endpoint that passes here is usable by the engine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import List

from ..errors import KfraError
from .canonical import digest_value
from .protocol import PROTOCOL_VERSION, ToolRequest
from .schemas import validate_request, validate_response
from .transport import Transport


@dataclass(frozen=True)
class ConformanceResult:
    check: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.ok else "FAIL"
        text = f"{mark} {self.check}"
        if self.detail:
            text += f" ({self.detail})"
        return text


def _load_golden() -> dict:
    data = resources.files("kfra.tools").joinpath(
        "conformance_data/golden_requests.json"
    )
    return json.loads(data.read_text("utf-8"))


def golden_requests() -> List[ToolRequest]:
    """The golden request set, one per tool kind and reason mode."""
    doc = _load_golden()
    return [ToolRequest(kind=r["kind"], body=r["body"]) for r in doc["requests"]]


def _request_name(request: ToolRequest) -> str:
    if request.kind == "reason":
        return f"reason/{request.body['mode']}"
    return request.kind


def run_conformance(transport: Transport, timeout_s: float = 30.0) -> List[ConformanceResult]:
    """Run every conformance check against ``transport``.

    Returns one result per check; the suite passes when all are ok.
    Checks are independent: a failing endpoint does not stop the rest.
    """
    results: List[ConformanceResult] = []
    doc = _load_golden()

    # The canonicalization handshake: both sides must agree on the digest
    # of a fixed request, or caching and fixtures cannot interoperate.
    actual = digest_value(doc["golden_request"])
    results.append(
        ConformanceResult(
            check="canonical digest",
            ok=actual == doc["golden_digest"],
            detail="" if actual == doc["golden_digest"] else f"got {actual}",
        )
    )

    try:
        alive, rtt_ms = transport.ping()
        results.append(
            ConformanceResult(
                check="ping", ok=alive, detail=f"rtt {rtt_ms:.1f} ms" if alive else "not ok"
            )
        )
    except Exception as exc:  # noqa: BLE001 - report, don't abort the suite
        results.append(ConformanceResult(check="ping", ok=False, detail=str(exc)))

    for request in golden_requests():
        name = _request_name(request)
        try:
            validate_request(request)
            first = transport.send(request, timeout_s=timeout_s)
            validate_response(request, first)
            if not first.ok:
                results.append(
                    ConformanceResult(
                        check=f"{name} response",
                        ok=False,
                        detail=f"status {first.status}: {first.body.get('message', '')}",
                    )
                )
                continue
            results.append(ConformanceResult(check=f"{name} response", ok=True))

            second = transport.send(request, timeout_s=timeout_s)
            validate_response(request, second)
            same = second.ok and second.body == first.body
            results.append(
                ConformanceResult(
                    check=f"{name} determinism",
                    ok=same,
                    detail="" if same else "second reply differs",
                )
            )
        except KfraError as exc:
            results.append(ConformanceResult(check=f"{name} response", ok=False, detail=str(exc)))
        except Exception as exc:  # noqa: BLE001
            results.append(ConformanceResult(check=f"{name} response", ok=False, detail=str(exc)))

    return results


def conformance_passed(results: List[ConformanceResult]) -> bool:
    return all(r.ok for r in results)


def render_results(results: List[ConformanceResult]) -> str:
    lines = [r.line() for r in results]
    passed = sum(1 for r in results if r.ok)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)


__all__ = [
    "ConformanceResult",
    "golden_requests",
    "run_conformance",
    "conformance_passed",
    "render_results",
    "PROTOCOL_VERSION",
]
