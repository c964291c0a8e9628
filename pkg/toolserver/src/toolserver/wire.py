"""Wire-level constants and the pixel payload codec.

These mirror the published tool protocol: request envelopes are
{"kind", "version", "body"}, responses are {"kind", "status", "body",
"latency_ms"}, and image crops travel as base64 little-endian float32
in row-major (h, w, c) order.
"""

import base64

import numpy as np

PROTOCOL_VERSION = "1"
VERSION_HEADER = "X-Protocol-Version"

TOOL_KINDS = ("detect", "image_search", "text_search", "embed", "enhance", "reason")
REASON_MODES = ("candidates", "cues", "answer")
RESPONSE_STATUSES = ("ok", "tool_error", "timeout")


class WireError(ValueError):
    """A payload does not follow the wire contract."""


def encode_blob(pixels) -> dict:
    """Encode an array as the wire pixel payload."""
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.size == 0:
        raise WireError(f"pixel array must be 2-d or 3-d and non-empty, got shape {arr.shape}")
    h, w, c = arr.shape
    payload = base64.b64encode(arr.astype("<f4").tobytes(order="C")).decode("ascii")
    return {"h": h, "w": w, "c": c, "dtype": "f32", "b64": payload}


def decode_blob(blob: dict) -> np.ndarray:
    """Decode a wire pixel payload back to a float32 (h, w, c) array."""
    try:
        h, w, c = int(blob["h"]), int(blob["w"]), int(blob["c"])
        dtype = blob["dtype"]
        raw = base64.b64decode(blob["b64"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"malformed pixel payload: {exc}") from exc
    if dtype != "f32":
        raise WireError(f"unsupported pixel dtype: {dtype!r}")
    if h < 1 or w < 1 or c < 1:
        raise WireError("pixel payload has empty dimensions")
    expect = h * w * c * 4
    if len(raw) != expect:
        raise WireError(f"pixel payload holds {len(raw)} bytes, expected {expect}")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w, c).astype(np.float32)
