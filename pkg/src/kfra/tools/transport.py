"""Transports: HTTP/JSON client, pure fixture backend, and test adapters.

The fixture backend answers from a bundle directory: a manifest plus one
rule file per kind. Entries are exact digest matches; rules are ordered
pattern matches; a scripted sequence rule steps through its list once and
then sticks on the last element (for retry tests). Unmatched requests fall
to the bundle's miss rule.
"""

from __future__ import annotations

import json
import os
import time
from typing import Callable, Optional, Protocol, Union

from ..errors import FixtureError, KfraError, ProtocolViolation
from .protocol import (
    PROTOCOL_VERSION,
    TOOL_KINDS,
    VERSION_HEADER,
    ToolRequest,
    ToolResponse,
    canonical_digest,
    error_body,
)


class TransportError(KfraError):
    """A send that produced no protocol response (connection refused, bad
    HTTP status); retryable at the client layer."""


class Transport(Protocol):
    def send(self, request: ToolRequest, timeout_s: float) -> ToolResponse: ...

    def ping(self) -> tuple[bool, float]: ...


class HttpTransport:
    """POSTs envelopes to <base>/v1/<kind> with the protocol version header."""

    def __init__(self, base_url: str, bearer_token: Optional[str] = None, session=None):
        if session is None:
            import requests

            session = requests.Session()
        self.base_url = base_url.rstrip("/")
        self.session = session
        self._headers = {VERSION_HEADER: PROTOCOL_VERSION}
        if bearer_token:
            self._headers["Authorization"] = f"Bearer {bearer_token}"
        self.send_count = 0

    def send(self, request: ToolRequest, timeout_s: float) -> ToolResponse:
        import requests

        self.send_count += 1
        url = f"{self.base_url}/v1/{request.kind}"
        started = time.monotonic()
        try:
            resp = self.session.post(
                url, json=request.to_dict(), headers=self._headers, timeout=timeout_s
            )
        except requests.Timeout:
            elapsed = (time.monotonic() - started) * 1000.0
            return ToolResponse(
                request.kind, "timeout", error_body("timeout", f"no reply in {timeout_s}s"), elapsed
            )
        except requests.RequestException as exc:
            raise TransportError(f"POST {url} failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"POST {url} returned HTTP {resp.status_code}")
        try:
            return ToolResponse.from_dict(resp.json())
        except (ValueError, ProtocolViolation) as exc:
            raise ProtocolViolation(f"unparseable response from {url}: {exc}") from exc

    def ping(self) -> tuple[bool, float]:
        import requests

        started = time.monotonic()
        try:
            resp = self.session.post(
                f"{self.base_url}/v1/ping", json={}, headers=self._headers, timeout=10
            )
            rtt = (time.monotonic() - started) * 1000.0
            return bool(resp.status_code == 200 and resp.json().get("ok") is True), rtt
        except requests.RequestException:
            return False, (time.monotonic() - started) * 1000.0


def _walk(body: dict, dotted: str):
    cur = body
    for part in dotted.split("."):
        if isinstance(cur, dict) and part in cur:
            cur = cur[part]
        elif isinstance(cur, list) and part.isdigit() and int(part) < len(cur):
            cur = cur[int(part)]
        else:
            return None
    return cur


def _rule_matches(when: dict, request: ToolRequest) -> bool:
    for cond, arg in when.items():
        if cond == "always":
            if arg is not True:
                return False
        elif cond == "digest":
            if canonical_digest(request) != arg:
                return False
        elif cond == "equals":
            for path, value in arg.items():
                if _walk(request.body, path) != value:
                    return False
        elif cond == "contains":
            for path, sub in arg.items():
                at = _walk(request.body, path)
                if not isinstance(at, str) or sub not in at:
                    return False
        else:
            raise FixtureError(f"unknown rule condition {cond!r}")
    return True


class FixtureTransport:
    """Deterministic offline backend answering from a bundle directory."""

    def __init__(self, bundle_dir: str):
        self.bundle_dir = bundle_dir
        self.send_count = 0
        manifest_path = os.path.join(bundle_dir, "manifest.json")
        try:
            with open(manifest_path, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise FixtureError(f"cannot load fixture manifest {manifest_path}: {exc}") from exc
        self.version = manifest.get("version")
        if self.version != PROTOCOL_VERSION:
            raise FixtureError(
                f"fixture bundle speaks protocol {self.version!r}, engine speaks {PROTOCOL_VERSION!r}"
            )
        self.miss_rule = manifest.get("miss_rule", "error")
        if self.miss_rule not in ("error", "tool_error"):
            raise FixtureError(f"unknown miss_rule {self.miss_rule!r}")
        self._tools: dict[str, dict] = {}
        self._seq_state: dict[int, int] = {}
        for kind, filename in manifest.get("tools", {}).items():
            if kind not in TOOL_KINDS:
                raise FixtureError(f"manifest names unknown tool kind {kind!r}")
            path = os.path.join(bundle_dir, filename)
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    spec = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise FixtureError(f"cannot load fixture rules {path}: {exc}") from exc
            if not isinstance(spec.get("entries", {}), dict) or not isinstance(
                spec.get("rules", []), list
            ):
                raise FixtureError(f"fixture rules {path} are malformed")
            self._tools[kind] = spec

    def send(self, request: ToolRequest, timeout_s: float) -> ToolResponse:
        self.send_count += 1
        spec = self._tools.get(request.kind, {})
        digest = canonical_digest(request)
        entries = spec.get("entries", {})
        if digest in entries:
            return ToolResponse(request.kind, "ok", entries[digest], 0.0)
        for rule in spec.get("rules", []):
            if not _rule_matches(rule.get("when", {"always": True}), request):
                continue
            step = rule
            if "sequence" in rule:
                seq = rule["sequence"]
                idx = self._seq_state.get(id(rule), 0)
                step = seq[min(idx, len(seq) - 1)]
                self._seq_state[id(rule)] = idx + 1
            status = step.get("status", "ok")
            if status == "ok":
                return ToolResponse(request.kind, "ok", step["respond"], float(step.get("latency_ms", 0.0)))
            body = step.get(
                "respond", error_body(status, f"scripted {status} for {request.kind}")
            )
            return ToolResponse(request.kind, status, body, float(step.get("latency_ms", 0.0)))
        if "default" in spec:
            return ToolResponse(request.kind, "ok", spec["default"], 0.0)
        if self.miss_rule == "tool_error":
            return ToolResponse(
                request.kind,
                "tool_error",
                error_body("fixture_miss", f"no fixture for {request.kind} digest {digest}"),
                0.0,
            )
        raise FixtureError(f"no fixture for {request.kind} request with digest {digest}")

    def ping(self) -> tuple[bool, float]:
        return True, 0.0


class FunctionTransport:
    """Wraps a plain function request -> body dict (or full ToolResponse)."""

    def __init__(self, fn: Callable[[ToolRequest], Union[dict, ToolResponse]]):
        self.fn = fn
        self.send_count = 0

    def send(self, request: ToolRequest, timeout_s: float) -> ToolResponse:
        self.send_count += 1
        out = self.fn(request)
        if isinstance(out, ToolResponse):
            return out
        return ToolResponse(request.kind, "ok", out, 0.0)

    def ping(self) -> tuple[bool, float]:
        return True, 0.0


class RecordingTransport:
    """Delegates to an inner transport and remembers every ok exchange,
    keyed by request digest, for later export as a fixture bundle."""

    def __init__(self, inner: Transport):
        self.inner = inner
        self.send_count = 0
        self.recorded: dict[str, dict[str, dict]] = {kind: {} for kind in TOOL_KINDS}

    def send(self, request: ToolRequest, timeout_s: float) -> ToolResponse:
        self.send_count += 1
        response = self.inner.send(request, timeout_s)
        if response.ok:
            self.recorded[request.kind][canonical_digest(request)] = response.body
        return response

    def ping(self) -> tuple[bool, float]:
        return self.inner.ping()


def write_fixture_bundle(
    bundle_dir: str,
    entries_by_kind: dict[str, dict[str, dict]],
    rules_by_kind: Optional[dict[str, list]] = None,
    miss_rule: str = "error",
) -> None:
    """Serialize digest entries and pattern rules into a loadable bundle."""
    os.makedirs(bundle_dir, exist_ok=True)
    tools = {}
    rules_by_kind = rules_by_kind or {}
    for kind in TOOL_KINDS:
        entries = entries_by_kind.get(kind, {})
        rules = rules_by_kind.get(kind, [])
        if not entries and not rules:
            continue
        filename = f"{kind}.json"
        tools[kind] = filename
        with open(os.path.join(bundle_dir, filename), "w", encoding="utf-8") as fh:
            json.dump({"entries": entries, "rules": rules}, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
    manifest = {"version": PROTOCOL_VERSION, "miss_rule": miss_rule, "tools": tools}
    with open(os.path.join(bundle_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
