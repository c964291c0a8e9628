"""Stage 1: propose candidate categories for every entity in the image.

Detection finds the entities, exemplar retrieval pulls visually similar
captioned images for each crop, and the reason tool turns both into a
ranked open-set candidate list.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import CandidateEmpty, EmptyCategory, ProtocolViolation
from ..evidence import (
    CandidateHypothesis,
    ImageRef,
    Region,
    RetrievedExemplar,
    check_exemplar_ranks,
    merge_candidates,
    normalize_category,
    region_iou,
)
from ..pixels import crop_rect, to_blob
from ..toggles import Toggles
from ..tools.client import ToolClient
from ..tools.protocol import CallMeter
from ..trace import ReasoningTrace

WHOLE_IMAGE_BBOX = (0.0, 0.0, 1.0, 1.0)

DEFAULT_VOCABULARY = ("animal", "bird", "vehicle", "plant", "aircraft", "object")


@dataclass(frozen=True)
class Stage1Config:
    vocabulary_seed: tuple = DEFAULT_VOCABULARY
    score_floor: float = 0.25
    dedup_iou: float = 0.9
    top_m_exemplars: int = 5
    k_max_candidates: int = 5

    def __post_init__(self):
        if not self.vocabulary_seed:
            raise ValueError("vocabulary_seed must be non-empty")
        if not (0.0 <= self.score_floor <= 1.0):
            raise ValueError(f"score_floor out of [0,1]: {self.score_floor}")
        if not (0.0 < self.dedup_iou <= 1.0):
            raise ValueError(f"dedup_iou out of (0,1]: {self.dedup_iou}")
        if self.top_m_exemplars < 1:
            raise ValueError("top_m_exemplars must be positive")
        if self.k_max_candidates < 1:
            raise ValueError("k_max_candidates must be positive")

    def to_dict(self) -> dict:
        return {
            "vocabulary_seed": list(self.vocabulary_seed),
            "score_floor": self.score_floor,
            "dedup_iou": self.dedup_iou,
            "top_m_exemplars": self.top_m_exemplars,
            "k_max_candidates": self.k_max_candidates,
        }


def whole_image_region() -> Region:
    return Region(bbox=WHOLE_IMAGE_BBOX, score=1.0)


def dedup_regions(regions: Sequence[Region], dedup_iou: float) -> list[Region]:
    """Greedy overlap suppression: walk by score descending, keep a region
    only while its IoU with every kept one stays below the threshold."""
    ranked = sorted(regions, key=lambda r: (-r.score, r.bbox))
    kept: list[Region] = []
    for region in ranked:
        if all(region_iou(region, k) < dedup_iou for k in kept):
            kept.append(region)
    return kept


def detect_entities(
    client: ToolClient,
    image: ImageRef,
    cfg: Stage1Config,
    toggles: Toggles,
    meter: Optional[CallMeter] = None,
    trace: Optional[ReasoningTrace] = None,
    score_floor: Optional[float] = None,
) -> list[Region]:
    """Entity proposals for one image; never empty.

    score_floor overrides the configured floor (the loop lowers it when
    widening). With detection off, or nothing above the floor, the whole
    frame stands in as the single entity.
    """
    floor = cfg.score_floor if score_floor is None else score_floor
    if not toggles.od:
        if trace is not None:
            trace.emit("1", "skipped_toggle", {"toggle": "od"}, tool="detect")
        return [whole_image_region()]
    body = {
        "image": image.to_dict(),
        "vocabulary": list(cfg.vocabulary_seed),
        "score_floor": floor,
    }
    response = client.call("detect", body, meter=meter, trace=trace, stage="1")
    try:
        regions = [Region.from_dict(r) for r in response["regions"]]
    except ValueError as exc:
        raise ProtocolViolation(f"detect tool returned an invalid region: {exc}") from exc
    regions = [r for r in regions if r.score >= floor]
    kept = dedup_regions(regions, cfg.dedup_iou)
    return kept if kept else [whole_image_region()]


def region_crop(image_pixels: np.ndarray, region: Region) -> np.ndarray:
    return crop_rect(image_pixels, region.bbox)


def retrieve_exemplars(
    client: ToolClient,
    crop: np.ndarray,
    cfg: Stage1Config,
    toggles: Toggles,
    meter: Optional[CallMeter] = None,
    trace: Optional[ReasoningTrace] = None,
    top_m: Optional[int] = None,
) -> list[RetrievedExemplar]:
    """Visually similar captioned exemplars for one entity crop.

    top_m overrides the configured count (the loop widens it). The tool's
    ranking is trusted; anything past top_m is dropped.
    """
    if not toggles.vs:
        if trace is not None:
            trace.emit("1", "skipped_toggle", {"toggle": "vs"}, tool="image_search")
        return []
    m = cfg.top_m_exemplars if top_m is None else top_m
    body = {"image_crop": to_blob(crop), "top_m": m}
    response = client.call("image_search", body, meter=meter, trace=trace, stage="1")
    try:
        exemplars = sorted(
            (RetrievedExemplar.from_dict(e) for e in response["exemplars"]),
            key=lambda e: e.rank,
        )[:m]
        check_exemplar_ranks(exemplars)
    except ValueError as exc:
        raise ProtocolViolation(f"image_search tool returned invalid exemplars: {exc}") from exc
    return exemplars


def generate_candidates(
    client: ToolClient,
    image: ImageRef,
    question: str,
    exemplars: Sequence[RetrievedExemplar],
    cfg: Stage1Config,
    meter: Optional[CallMeter] = None,
    trace: Optional[ReasoningTrace] = None,
    k_max: Optional[int] = None,
) -> list[CandidateHypothesis]:
    """Ranked open-set category hypotheses for one entity."""
    k = cfg.k_max_candidates if k_max is None else k_max
    body: dict = {"mode": "candidates", "image": image.to_dict(), "question": question}
    if exemplars:
        body["exemplars"] = [e.to_dict() for e in exemplars]
    response = client.call("reason", body, meter=meter, trace=trace, stage="1")
    parsed: list[CandidateHypothesis] = []
    for raw in response["candidates"]:
        try:
            category = normalize_category(raw["category"])
        except EmptyCategory:
            continue
        confidence = min(1.0, max(0.0, float(raw["confidence"])))
        parsed.append(CandidateHypothesis(category, confidence))
    if not parsed:
        raise CandidateEmpty(f"reason tool proposed no usable candidates for {question!r}")
    return merge_candidates(parsed, [], k)
