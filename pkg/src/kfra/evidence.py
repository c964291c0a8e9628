"""Domain value types and the mask/list algebra shared by every stage.

All types are immutable after construction and validate their invariants in
__post_init__, so a constructed value is always safe to share across workers.
Canonical JSON serialization lives next to each type (to_dict/from_dict);
masks serialize as {h, w, cells: row-major, provenance, origin_bbox}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyCategory, EmptySupport, ShapeError

DIMENSIONS = ("object", "attribute", "action", "count", "reason", "knowledge")
CUE_KINDS = ("colour", "structure", "behaviour", "context", "other")
MASK_PROVENANCES = ("coarse", "refined", "enhanced")

BBox = tuple[float, float, float, float]


def normalize_category(raw: str) -> str:
    """Canonicalize category/answer text: lowercase, trim, collapse whitespace.

    Idempotent. Raises EmptyCategory when nothing survives normalization.
    """
    out = " ".join(str(raw).lower().split())
    if not out:
        raise EmptyCategory(f"category empty after normalization: {raw!r}")
    return out


def _check_bbox(bbox: Sequence[float]) -> BBox:
    x0, y0, x1, y1 = (float(v) for v in bbox)
    if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
        raise ValueError(f"bbox out of bounds or degenerate: {bbox}")
    return (x0, y0, x1, y1)


@dataclass(frozen=True)
class ImageRef:
    """Reference to an input image: a source path/URL plus pixel dimensions."""

    source: str
    width: int
    height: int

    def __post_init__(self):
        if not self.source:
            raise ValueError("ImageRef.source must be non-empty")
        if self.width < 1 or self.height < 1:
            raise ValueError("ImageRef dimensions must be >= 1")

    def to_dict(self) -> dict:
        return {"source": self.source, "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRef":
        return cls(source=d["source"], width=int(d["width"]), height=int(d["height"]))


@dataclass(frozen=True)
class Query:
    """A natural-language question, optionally multiple-choice and typed."""

    question: str
    choices: Optional[tuple[str, ...]] = None
    dimension: Optional[str] = None

    def __post_init__(self):
        if not self.question:
            raise ValueError("Query.question must be non-empty")
        if self.choices is not None:
            object.__setattr__(self, "choices", tuple(self.choices))
            if len(self.choices) < 2:
                raise ValueError("Query.choices must have length >= 2 when present")
            canon = [normalize_category(c) for c in self.choices]
            if len(set(canon)) != len(canon):
                raise ValueError("Query.choices must be pairwise distinct after canonicalization")
        if self.dimension is not None and self.dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension: {self.dimension}")

    def to_dict(self) -> dict:
        out: dict = {"question": self.question}
        if self.choices is not None:
            out["choices"] = list(self.choices)
        if self.dimension is not None:
            out["dimension"] = self.dimension
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Query":
        return cls(
            question=d["question"],
            choices=tuple(d["choices"]) if d.get("choices") is not None else None,
            dimension=d.get("dimension"),
        )


@dataclass(frozen=True)
class Region:
    """A detected entity: normalized bounding box plus detection confidence."""

    bbox: BBox
    score: float
    label_hint: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "bbox", _check_bbox(self.bbox))
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"Region.score out of [0,1]: {self.score}")

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0)

    def to_dict(self) -> dict:
        out: dict = {"bbox": list(self.bbox), "score": self.score}
        if self.label_hint is not None:
            out["label_hint"] = self.label_hint
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        return cls(bbox=tuple(d["bbox"]), score=float(d["score"]), label_hint=d.get("label_hint"))


def region_iou(a: Region, b: Region) -> float:
    """Intersection-over-union of two normalized boxes."""
    ax0, ay0, ax1, ay1 = a.bbox
    bx0, by0, bx1, by1 = b.bbox
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class RetrievedExemplar:
    """One visually-similar web result: image reference plus its caption."""

    image: ImageRef
    caption: str
    source_url: str
    rank: int

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("RetrievedExemplar.rank must be >= 1")

    def to_dict(self) -> dict:
        return {
            "image": self.image.to_dict(),
            "caption": self.caption,
            "source_url": self.source_url,
            "rank": self.rank,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievedExemplar":
        return cls(
            image=ImageRef.from_dict(d["image"]),
            caption=d["caption"],
            source_url=d["source_url"],
            rank=int(d["rank"]),
        )


def check_exemplar_ranks(exemplars: Sequence[RetrievedExemplar]) -> None:
    """Within one result set, ranks must be distinct and contiguous from 1."""
    ranks = sorted(e.rank for e in exemplars)
    if ranks != list(range(1, len(exemplars) + 1)):
        raise ValueError(f"exemplar ranks not contiguous from 1: {ranks}")


@dataclass(frozen=True)
class CandidateHypothesis:
    """An open-set category guess with the confidence assigned to it."""

    category: str
    confidence: float

    def __post_init__(self):
        if normalize_category(self.category) != self.category:
            raise ValueError(f"CandidateHypothesis.category not canonical: {self.category!r}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence out of [0,1]: {self.confidence}")

    def to_dict(self) -> dict:
        return {"category": self.category, "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateHypothesis":
        return cls(category=d["category"], confidence=float(d["confidence"]))


def merge_candidates(
    a: Sequence[CandidateHypothesis],
    b: Sequence[CandidateHypothesis],
    k_max: int,
) -> list[CandidateHypothesis]:
    """Union two candidate lists keeping per-category max confidence.

    Sorted by confidence descending, ties broken by ascending category text,
    then truncated to k_max.
    """
    if k_max < 1:
        raise ValueError("k_max must be positive")
    best: dict[str, float] = {}
    for cand in list(a) + list(b):
        prev = best.get(cand.category)
        if prev is None or cand.confidence > prev:
            best[cand.category] = cand.confidence
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return [CandidateHypothesis(c, p) for c, p in ranked[:k_max]]


@dataclass(frozen=True)
class KnowledgeSnippet:
    """A retrieved factual description tagged with the candidate it supports."""

    category: str
    text: str
    source: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("KnowledgeSnippet.text must be non-empty")

    def to_dict(self) -> dict:
        return {"category": self.category, "text": self.text, "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeSnippet":
        return cls(category=d["category"], text=d["text"], source=d["source"])


@dataclass(frozen=True)
class DiscriminativeCue:
    """A short discriminative trait ("red beak") parsed from knowledge."""

    index: int
    phrase: str
    kind: str = "other"

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("cue index must be >= 0")
        if not self.phrase:
            raise ValueError("cue phrase must be non-empty")
        if self.kind not in CUE_KINDS:
            raise ValueError(f"unknown cue kind: {self.kind}")

    def to_dict(self) -> dict:
        return {"index": self.index, "phrase": self.phrase, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminativeCue":
        return cls(index=int(d["index"]), phrase=d["phrase"], kind=d.get("kind", "other"))


def check_cue_indices(cues: Sequence[DiscriminativeCue]) -> None:
    """Indices within one cue set must be distinct and contiguous from 0."""
    idx = sorted(c.index for c in cues)
    if idx != list(range(len(cues))):
        raise ValueError(f"cue indices not contiguous from 0: {idx}")


class Mask:
    """A spatial attention mask registered to a region's bounding box.

    grid is an h-by-w float array with every cell in [0,1]; the grid spans
    origin_bbox, not the full image. Instances are immutable.
    """

    __slots__ = ("grid", "provenance", "origin_bbox")

    def __init__(self, grid, provenance: str, origin_bbox: Sequence[float]):
        arr = np.asarray(grid, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask grid must be 2-D and non-empty, got shape {arr.shape}")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("mask cells must lie in [0,1]")
        if provenance not in MASK_PROVENANCES:
            raise ValueError(f"unknown mask provenance: {provenance}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "grid", arr)
        object.__setattr__(self, "provenance", provenance)
        object.__setattr__(self, "origin_bbox", _check_bbox(origin_bbox))

    def __setattr__(self, name, value):
        raise AttributeError("Mask is immutable")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape  # type: ignore[return-value]

    def __eq__(self, other):
        return (
            isinstance(other, Mask)
            and self.provenance == other.provenance
            and self.origin_bbox == other.origin_bbox
            and np.array_equal(self.grid, other.grid)
        )

    def __repr__(self):
        h, w = self.grid.shape
        return f"Mask({h}x{w}, {self.provenance}, bbox={self.origin_bbox})"

    def to_dict(self) -> dict:
        h, w = self.grid.shape
        return {
            "h": h,
            "w": w,
            "cells": [float(v) for v in self.grid.reshape(-1)],
            "provenance": self.provenance,
            "origin_bbox": list(self.origin_bbox),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mask":
        grid = np.array(d["cells"], dtype=np.float64).reshape(d["h"], d["w"])
        return cls(grid, d["provenance"], tuple(d["origin_bbox"]))


def whole_region_mask(origin_bbox: Sequence[float]) -> Mask:
    """An uninformative all-ones 1x1 mask covering the whole region."""
    return Mask(np.ones((1, 1)), "coarse", origin_bbox)


def mask_apply(pixels, mask: Mask):
    """Element-wise masking: each output channel = input channel x mask cell.

    pixels may be h-by-w or h-by-w-by-channels; its h and w must equal the
    mask grid's. Raises ShapeError on mismatch.
    """
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim not in (2, 3):
        raise ShapeError(f"pixels must be 2-D or 3-D, got shape {px.shape}")
    if px.shape[:2] != mask.grid.shape:
        raise ShapeError(f"pixel grid {px.shape[:2]} does not match mask grid {mask.grid.shape}")
    m = mask.grid if px.ndim == 2 else mask.grid[:, :, None]
    return px * m


def mask_support_bbox(mask: Mask, level: float) -> BBox:
    """Tightest box, in origin_bbox coordinates, covering cells >= level x max.

    level must lie in (0,1]. Raises EmptySupport for an all-zero mask. The
    returned box always lies inside the mask's origin_bbox and has positive
    area.
    """
    if not (0.0 < level <= 1.0):
        raise ValueError(f"level out of (0,1]: {level}")
    peak = float(mask.grid.max())
    if peak <= 0.0:
        raise EmptySupport("mask has no positive cell")
    rows, cols = np.nonzero(mask.grid >= level * peak)
    r0, r1 = int(rows.min()), int(rows.max())
    c0, c1 = int(cols.min()), int(cols.max())
    h, w = mask.grid.shape
    ox0, oy0, ox1, oy1 = mask.origin_bbox
    sx, sy = ox1 - ox0, oy1 - oy0
    return (
        ox0 + sx * (c0 / w),
        oy0 + sy * (r0 / h),
        ox0 + sx * ((c1 + 1) / w),
        oy0 + sy * ((r1 + 1) / h),
    )


def mask_support_cells(mask: Mask, level: float) -> set[tuple[int, int]]:
    """Cell coordinates with value >= level x max; empty for all-zero masks."""
    peak = float(mask.grid.max())
    if peak <= 0.0:
        return set()
    rows, cols = np.nonzero(mask.grid >= level * peak)
    return {(int(r), int(c)) for r, c in zip(rows, cols)}


@dataclass(frozen=True)
class GroundedCue:
    """A cue aligned to its spatial support, with alignment confidence."""

    cue: DiscriminativeCue
    mask: Mask
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"GroundedCue.score out of [0,1]: {self.score}")

    def to_dict(self) -> dict:
        return {"cue": self.cue.to_dict(), "mask": self.mask.to_dict(), "score": self.score}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundedCue":
        return cls(
            cue=DiscriminativeCue.from_dict(d["cue"]),
            mask=Mask.from_dict(d["mask"]),
            score=float(d["score"]),
        )


@dataclass(frozen=True)
class EvidenceTuple:
    """Per-entity aggregate of candidates, knowledge, cues, and masks.

    per_candidate entries are (candidate, snippets, grounded cues), ordered
    by candidate confidence descending; each candidate appears exactly once.
    """

    entity: Region
    per_candidate: tuple[
        tuple[CandidateHypothesis, tuple[KnowledgeSnippet, ...], tuple[GroundedCue, ...]], ...
    ]

    def __post_init__(self):
        entries = tuple(
            (cand, tuple(snips), tuple(cues)) for cand, snips, cues in self.per_candidate
        )
        object.__setattr__(self, "per_candidate", entries)
        cats = [cand.category for cand, _, _ in entries]
        if len(set(cats)) != len(cats):
            raise ValueError("each candidate must appear exactly once in EvidenceTuple")
        confs = [cand.confidence for cand, _, _ in entries]
        if confs != sorted(confs, reverse=True):
            raise ValueError("per_candidate must be ordered by descending confidence")

    def to_dict(self) -> dict:
        return {
            "entity": self.entity.to_dict(),
            "per_candidate": [
                {
                    "candidate": cand.to_dict(),
                    "snippets": [s.to_dict() for s in snips],
                    "cues": [g.to_dict() for g in cues],
                }
                for cand, snips, cues in self.per_candidate
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvidenceTuple":
        return cls(
            entity=Region.from_dict(d["entity"]),
            per_candidate=tuple(
                (
                    CandidateHypothesis.from_dict(e["candidate"]),
                    tuple(KnowledgeSnippet.from_dict(s) for s in e["snippets"]),
                    tuple(GroundedCue.from_dict(g) for g in e["cues"]),
                )
                for e in d["per_candidate"]
            ),
        )


@dataclass(frozen=True)
class AnswerDistribution:
    """Probability map over canonical answers, with the argmax pulled out."""

    probs: dict[str, float] = field(default_factory=dict)
    best: str = ""
    confidence: float = 0.0

    def __post_init__(self):
        for k, v in self.probs.items():
            if not (-1e-9 <= v <= 1.0 + 1e-9):
                raise ValueError(f"probability for {k!r} out of [0,1]: {v}")
        if self.best not in self.probs:
            raise ValueError("best must be a key of probs")
        top = max(self.probs.values())
        if self.probs[self.best] < top - 1e-12:
            raise ValueError("best must be an argmax of probs")
        if abs(self.confidence - self.probs[self.best]) > 1e-12:
            raise ValueError("confidence must equal probs[best]")

    def to_dict(self) -> dict:
        return {
            "probs": {k: self.probs[k] for k in sorted(self.probs)},
            "best": self.best,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnswerDistribution":
        return cls(
            probs={k: float(v) for k, v in d["probs"].items()},
            best=d["best"],
            confidence=float(d["confidence"]),
        )
