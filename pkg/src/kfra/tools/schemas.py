"""Loads the shared JSON schema files and validates envelopes and bodies.

These files are the single wire contract; the tool-server validates against
the same ones. Checks jsonschema cannot express (vector norms, pixel
dimensions) live in extra_response_checks.
"""

from __future__ import annotations

import json
import math
from functools import lru_cache
from importlib import resources

import jsonschema
import numpy as np

from ..errors import ProtocolViolation
from .protocol import ToolRequest, ToolResponse


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    ref = resources.files("kfra.tools") / "schemas" / f"{name}.json"
    return json.loads(ref.read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def _validator(name: str) -> jsonschema.Draft202012Validator:
    return jsonschema.Draft202012Validator(load_schema(name))


def _check(name: str, payload, context: str) -> None:
    err = jsonschema.exceptions.best_match(_validator(name).iter_errors(payload))
    if err is not None:
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ProtocolViolation(f"{context} violates schema {name} at {path}: {err.message}")


def request_body_schema(kind: str) -> str:
    return f"{kind}_request"


def response_body_schema(kind: str, mode: str | None = None) -> str:
    if kind == "reason":
        if mode not in ("candidates", "cues", "answer"):
            raise ProtocolViolation(f"reason response needs a valid mode, got {mode!r}")
        return f"reason_{mode}_response"
    return f"{kind}_response"


def validate_request(request: ToolRequest) -> None:
    _check("request_envelope", request.to_dict(), f"{request.kind} request")
    _check(request_body_schema(request.kind), request.body, f"{request.kind} request body")


def validate_response(request: ToolRequest, response: ToolResponse) -> None:
    """Envelope always; ok bodies against the kind schema, errors against the
    error schema."""
    _check("response_envelope", response.to_dict(), f"{request.kind} response")
    if response.kind != request.kind:
        raise ProtocolViolation(
            f"response kind {response.kind!r} does not match request {request.kind!r}"
        )
    if response.ok:
        if request.kind == "embed":
            # Vector grids are far too large for per-element jsonschema;
            # an equivalent vectorized check replaces it.
            _check_embed_body(request, response.body)
        else:
            name = response_body_schema(request.kind, request.body.get("mode"))
            _check(name, response.body, f"{request.kind} response body")
            extra_response_checks(request, response.body)
    else:
        _check("error_body", response.body, f"{request.kind} error body")


def _norm(v) -> float:
    return math.sqrt(sum(float(x) * float(x) for x in v))


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ProtocolViolation(message)


def _is_number(x) -> bool:
    return type(x) is float or type(x) is int


def _vector_matrix(vecs, what: str) -> np.ndarray:
    """(n, dim) array from a list of equal-length numeric vectors."""
    _require(isinstance(vecs, list), f"embed: {what} must be an array")
    if not vecs:
        return np.zeros((0, 0))
    for vec in vecs:
        _require(
            isinstance(vec, list) and len(vec) >= 1,
            f"embed: {what} entries must be non-empty vectors",
        )
        _require(all(_is_number(x) for x in vec), f"embed: {what} must contain numbers")
    try:
        arr = np.asarray(vecs, dtype=np.float64)
    except ValueError as exc:
        raise ProtocolViolation(f"embed: {what} vectors have mixed dimensions") from exc
    _require(bool(np.isfinite(arr).all()), f"embed: {what} must be finite")
    return arr


def _patch_matrix(rows, what: str = "patch_vecs") -> np.ndarray:
    """(rows, cols, dim) array from a nested vector grid."""
    _require(isinstance(rows, list), f"embed: {what} must be an array")
    if not rows or all(isinstance(r, list) and not r for r in rows):
        return np.zeros((len(rows), 0, 0))
    mats = [_vector_matrix(row, what) for row in rows]
    try:
        arr = np.asarray(mats)
    except ValueError as exc:
        raise ProtocolViolation(f"embed: {what} grid is ragged") from exc
    if arr.ndim != 3:
        raise ProtocolViolation(f"embed: {what} grid is ragged")
    return arr


def _check_embed_body(request: ToolRequest, body) -> None:
    """Structural and cross-field validation of an embed response.

    Enforces what the embed_response schema plus the old per-element
    checks did, but vectorized. Slightly stricter than raw jsonschema in
    one respect: non-finite values are rejected, which no JSON wire could
    deliver anyway.
    """
    _require(isinstance(body, dict), "embed response body must be an object")
    unknown = set(body) - {"text_vecs", "patch_vecs"}
    _require(not unknown, f"embed response has unknown fields {sorted(unknown)}")
    _require(
        "text_vecs" in body or "patch_vecs" in body,
        "embed response needs text_vecs or patch_vecs",
    )
    tmat = pmat = None
    dims = set()
    if "text_vecs" in body:
        tmat = _vector_matrix(body["text_vecs"], "text_vecs")
        if tmat.shape[0]:
            dims.add(tmat.shape[1])
    if "patch_vecs" in body:
        pmat = _patch_matrix(body["patch_vecs"])
        if pmat.size:
            dims.add(pmat.shape[2])
    _require(len(dims) <= 1, f"embed: mixed vector dimensions {sorted(dims)}")

    texts = request.body.get("texts")
    if texts is not None:
        _require(
            tmat is not None and tmat.shape[0] == len(texts),
            "embed: text_vecs count must match texts",
        )
    if request.body.get("image_crop") is not None:
        grid = request.body.get("grid") or {}
        _require(
            pmat is not None
            and pmat.shape[0] == grid.get("rows")
            and pmat.shape[1] == grid.get("cols"),
            "embed: patch_vecs shape must match grid",
        )
    for mat, label in ((tmat, "text"), (pmat, "patch")):
        if mat is not None and mat.size:
            norms = np.sqrt((mat * mat).sum(axis=-1))
            _require(
                bool(np.all(np.abs(norms - 1.0) <= 1e-6)),
                f"embed: {label} vector not unit-norm within 1e-6",
            )


def extra_response_checks(request: ToolRequest, body: dict) -> None:
    """Cross-field constraints beyond jsonschema's reach."""
    if request.kind == "enhance":
        src = request.body["image_crop"]
        scale = request.body["scale"]
        out = body["image_crop"]
        if out["h"] != src["h"] * scale or out["w"] != src["w"] * scale:
            raise ProtocolViolation(
                f"enhance: output {out['h']}x{out['w']} is not input scaled by {scale}"
            )
