"""HTTP front end: one process serves every bound tool kind.

Routes follow the wire contract: POST /v1/<kind> with a request
envelope, POST /v1/ping for liveness. Handled calls always return
HTTP 200 with a response envelope; protocol violations that predate
dispatch, a missing version header or an unroutable kind, use plain
HTTP errors instead.
"""

import argparse
import logging
import time

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .adapters import BadRequest, build_adapters
from .backends import BackendTimeout
from .bindings import default_bindings, load_bindings
from .wire import PROTOCOL_VERSION, VERSION_HEADER

log = logging.getLogger("toolserver")


def _error(code, message, retryable=None):
    body = {"code": code, "message": message}
    if retryable is not None:
        body["retryable"] = retryable
    return body


def _dispatch(adapter, envelope):
    if not isinstance(envelope, dict):
        return "tool_error", _error("bad_envelope", "request envelope must be a JSON object")
    if envelope.get("kind") != adapter.kind:
        return "tool_error", _error(
            "bad_envelope",
            f"envelope kind {envelope.get('kind')!r} does not match route {adapter.kind!r}",
        )
    if envelope.get("version") != PROTOCOL_VERSION:
        return "tool_error", _error(
            "bad_envelope",
            f"server speaks protocol {PROTOCOL_VERSION!r}, envelope says {envelope.get('version')!r}",
        )
    body = envelope.get("body")
    if not isinstance(body, dict):
        return "tool_error", _error("bad_envelope", "envelope body must be a JSON object")
    try:
        return "ok", adapter.handle(body)
    except BackendTimeout as exc:
        return "tool_error", _error("upstream_timeout", str(exc), retryable=True)
    except BadRequest as exc:
        return "tool_error", _error("bad_request", str(exc), retryable=False)
    except Exception as exc:  # backend bugs must not surface as HTTP 500
        return "tool_error", _error(
            "backend_error", f"{type(exc).__name__}: {exc}", retryable=False
        )


def create_app(bindings=None) -> FastAPI:
    """Build the application; bindings default to the offline stubs."""
    adapters = build_adapters(bindings if bindings is not None else default_bindings())
    app = FastAPI(title="tool server", docs_url=None, redoc_url=None)

    def version_problem(request):
        got = request.headers.get(VERSION_HEADER)
        if got is None:
            return _error("version_missing", f"{VERSION_HEADER} header is required")
        if got != PROTOCOL_VERSION:
            return _error(
                "version_mismatch",
                f"server speaks protocol {PROTOCOL_VERSION!r}, caller sent {got!r}",
            )
        return None

    @app.post("/v1/ping")
    async def ping(request: Request):
        problem = version_problem(request)
        if problem is not None:
            return JSONResponse(problem, status_code=400)
        return {"ok": True, "version": PROTOCOL_VERSION}

    @app.post("/v1/{kind}")
    async def call(kind: str, request: Request):
        problem = version_problem(request)
        if problem is not None:
            return JSONResponse(problem, status_code=400)
        adapter = adapters.get(kind)
        if adapter is None:
            return JSONResponse(
                _error("unknown_kind", f"no backend bound for kind {kind!r}"),
                status_code=404,
            )
        try:
            envelope = await request.json()
        except ValueError:
            return JSONResponse(
                _error("bad_envelope", "request body is not JSON"), status_code=400
            )
        started = time.monotonic()
        status, body = _dispatch(adapter, envelope)
        latency_ms = (time.monotonic() - started) * 1000.0
        # kind and status only; request bodies and credentials never reach the log
        log.info("%s -> %s", kind, status)
        return {"kind": kind, "status": status, "body": body, "latency_ms": latency_ms}

    return app


def serve(argv=None):
    """Run the server under uvicorn."""
    parser = argparse.ArgumentParser(description="serve the tool endpoints over HTTP")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8731)
    parser.add_argument("--bindings", help="path to a JSON bindings file; stubs when omitted")
    args = parser.parse_args(argv)
    bindings = load_bindings(args.bindings) if args.bindings else default_bindings()
    app = create_app(bindings)

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
