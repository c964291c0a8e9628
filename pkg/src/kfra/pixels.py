"""Raw pixel-grid IO, the base64 wire codec, and crop geometry helpers.

Images are plain JSON pixel grids ({"h", "w", "c", "pixels": row-major
floats}); nothing here decodes PNG/JPEG. On the wire, pixel payloads travel
as {"h", "w", "c", "dtype": "f32", "b64": base64 of little-endian float32
row-major bytes}.
"""

from __future__ import annotations

import base64
import json
import math
from typing import Sequence

import numpy as np

from .errors import DatasetError, ProtocolViolation

# Slack for float round-trips when normalized coordinates are mapped back to
# integer pixel indices; far above double noise, far below half a pixel.
_COORD_EPS = 1e-9


def load_image(path: str) -> np.ndarray:
    """Read a pixel-grid JSON file into a float32 (h, w, c) array."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DatasetError(f"cannot read image file {path}: {exc}", field="image") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"image file {path} is not valid JSON: {exc}", field="image") from exc
    try:
        h, w, c = int(raw["h"]), int(raw["w"]), int(raw["c"])
        arr = np.asarray(raw["pixels"], dtype=np.float32).reshape(h, w, c)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"image file {path} is malformed: {exc}", field="image") from exc
    if h < 1 or w < 1 or c < 1:
        raise DatasetError(f"image file {path} has empty dimensions", field="image")
    return arr


def save_image(path: str, pixels: np.ndarray) -> None:
    arr = _as_hwc(pixels)
    h, w, c = arr.shape
    doc = {"h": h, "w": w, "c": c, "pixels": [float(v) for v in arr.reshape(-1)]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _as_hwc(pixels) -> np.ndarray:
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or 0 in arr.shape:
        raise ValueError(f"pixels must be (h,w) or (h,w,c) and non-empty, got {arr.shape}")
    return arr


def to_blob(pixels) -> dict:
    """Encode an array as the wire pixel payload."""
    arr = _as_hwc(pixels)
    h, w, c = arr.shape
    payload = base64.b64encode(arr.astype("<f4").tobytes(order="C")).decode("ascii")
    return {"h": h, "w": w, "c": c, "dtype": "f32", "b64": payload}


def from_blob(blob: dict) -> np.ndarray:
    """Decode a wire pixel payload back to a float32 (h, w, c) array."""
    try:
        h, w, c = int(blob["h"]), int(blob["w"]), int(blob["c"])
        dtype = blob["dtype"]
        raw = base64.b64decode(blob["b64"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolation(f"malformed pixel payload: {exc}") from exc
    if dtype != "f32":
        raise ProtocolViolation(f"unsupported pixel dtype: {dtype!r}")
    if h < 1 or w < 1 or c < 1:
        raise ProtocolViolation("pixel payload has empty dimensions")
    expect = h * w * c * 4
    if len(raw) != expect:
        raise ProtocolViolation(f"pixel payload length {len(raw)} != expected {expect}")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w, c).astype(np.float32)


def bbox_to_rect(bbox: Sequence[float], h: int, w: int) -> tuple[int, int, int, int]:
    """Map a normalized (x0,y0,x1,y1) box to integer pixel bounds (y0,y1,x0,x1).

    Start edges floor, end edges ceil (with float-noise slack), so the rect
    covers the box and is never empty.
    """
    x0, y0, x1, y1 = bbox
    c0 = max(0, int(math.floor(x0 * w + _COORD_EPS)))
    r0 = max(0, int(math.floor(y0 * h + _COORD_EPS)))
    c1 = min(w, int(math.ceil(x1 * w - _COORD_EPS)))
    r1 = min(h, int(math.ceil(y1 * h - _COORD_EPS)))
    if r1 <= r0:
        r1 = min(h, r0 + 1)
        r0 = r1 - 1
    if c1 <= c0:
        c1 = min(w, c0 + 1)
        c0 = c1 - 1
    return r0, r1, c0, c1


def crop_rect(pixels: np.ndarray, bbox: Sequence[float]) -> np.ndarray:
    """Crop a normalized box out of an (h, w, c) array."""
    arr = _as_hwc(pixels)
    r0, r1, c0, c1 = bbox_to_rect(bbox, arr.shape[0], arr.shape[1])
    return arr[r0:r1, c0:c1, :]


def relative_bbox(inner: Sequence[float], outer: Sequence[float]) -> tuple[float, float, float, float]:
    """Express inner (image coords) as fractions of outer; clamped to [0,1]."""
    ox0, oy0, ox1, oy1 = outer
    sx, sy = ox1 - ox0, oy1 - oy0
    ix0, iy0, ix1, iy1 = inner
    rx0 = min(1.0, max(0.0, (ix0 - ox0) / sx))
    ry0 = min(1.0, max(0.0, (iy0 - oy0) / sy))
    rx1 = min(1.0, max(0.0, (ix1 - ox0) / sx))
    ry1 = min(1.0, max(0.0, (iy1 - oy0) / sy))
    return rx0, ry0, rx1, ry1


def compose_bbox(rel: Sequence[float], outer: Sequence[float]) -> tuple[float, float, float, float]:
    """Inverse of relative_bbox: map outer-relative fractions to image coords."""
    ox0, oy0, ox1, oy1 = outer
    sx, sy = ox1 - ox0, oy1 - oy0
    rx0, ry0, rx1, ry1 = rel
    return ox0 + rx0 * sx, oy0 + ry0 * sy, ox0 + rx1 * sx, oy0 + ry1 * sy


def expand_cells(cells: np.ndarray, h: int, w: int) -> np.ndarray:
    """Spread a (gh, gw) cell grid over (h, w) pixels; pixel (y, x) takes the
    value of the cell it falls in."""
    cells = np.asarray(cells, dtype=np.float64)
    gh, gw = cells.shape
    rows = (np.arange(h) * gh) // h
    cols = (np.arange(w) * gw) // w
    return cells[np.ix_(rows, cols)]


def upscale(pixels: np.ndarray, scale: int) -> np.ndarray:
    """Nearest-neighbour upscaling by an integer factor."""
    if scale < 1:
        raise ValueError("scale must be >= 1")
    arr = _as_hwc(pixels)
    return np.repeat(np.repeat(arr, scale, axis=0), scale, axis=1)
