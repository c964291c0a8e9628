"""Tiny pixel blobs and a deterministic in-process handler that answers
every tool kind with schema-valid bodies."""

import hashlib

import numpy as np

from kfra.pixels import from_blob, to_blob, upscale


def tiny_blob(h=2, w=2, c=1, fill=0.0):
    return to_blob(np.full((h, w, c), fill, dtype=np.float32))


def unit_vec_for(text: str, dim: int = 4) -> list:
    """Deterministic unit vector derived from the text's hash."""
    raw = hashlib.sha256(text.encode("utf-8")).digest()
    vals = np.frombuffer(raw[: 8 * dim], dtype="<u8").astype(np.float64)
    vec = vals / (2.0**64) - 0.5
    if not np.any(vec):
        vec = np.ones(dim)
    vec = vec / np.linalg.norm(vec)
    return [float(v) for v in vec]


def reference_handler(request):
    """Answer any golden-style request deterministically.

    Mirrors what a minimal live server would do, so the conformance suite
    can be exercised without a network.
    """
    body = request.body
    if request.kind == "detect":
        return {"regions": []}
    if request.kind == "image_search":
        return {
            "exemplars": [
                {
                    "image": {"source": f"stub://exemplar/{i}", "width": 16, "height": 16},
                    "caption": f"stub exemplar {i}",
                    "source_url": f"local://stub/{i}",
                    "rank": i,
                }
                for i in range(1, body["top_m"] + 1)
            ]
        }
    if request.kind == "text_search":
        return {
            "snippets": [
                {
                    "category": "",
                    "text": f"note {i} about {body['query']}",
                    "source": f"local://stub/notes/{i}",
                }
                for i in range(1, body["top_n"] + 1)
            ]
        }
    if request.kind == "embed":
        out = {}
        if "texts" in body:
            out["text_vecs"] = [unit_vec_for(t) for t in body["texts"]]
        if "image_crop" in body:
            rows, cols = body["grid"]["rows"], body["grid"]["cols"]
            out["patch_vecs"] = [
                [unit_vec_for(f"patch {r},{c}") for c in range(cols)] for r in range(rows)
            ]
        return out
    if request.kind == "enhance":
        pixels = from_blob(body["image_crop"])
        return {"image_crop": to_blob(upscale(pixels, body["scale"]))}
    if request.kind == "reason":
        mode = body["mode"]
        if mode == "candidates":
            return {"candidates": [{"category": "snow goose", "confidence": 0.9}]}
        if mode == "cues":
            return {"cues": [{"phrase": "black wingtips", "kind": "colour"}]}
        return {
            "probs": {c: (0.9 if i == 0 else 0.1) for i, c in enumerate(body.get("choices", ["yes", "no"])[:2])},
            "rationale": "stub rationale",
        }
    raise AssertionError(f"unhandled kind {request.kind}")
