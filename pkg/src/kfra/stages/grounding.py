"""Stage 2: ground each discriminative cue to pixels.

Per candidate: pull knowledge snippets, distill them into short visual
cues, locate every cue by coarse-to-fine semantic focusing, and upscale
the best-supported patch when even the best alignment is weak.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import CueEmpty, EmptyCategory, ToolUnavailable
from ..evidence import (
    CUE_KINDS,
    CandidateHypothesis,
    DiscriminativeCue,
    GroundedCue,
    KnowledgeSnippet,
    Mask,
    mask_apply,
    mask_support_bbox,
    normalize_category,
    whole_region_mask,
)
from ..pixels import crop_rect, expand_cells, from_blob, relative_bbox, to_blob
from ..toggles import Toggles
from ..tools.client import ToolClient
from ..tools.protocol import CallMeter
from ..trace import ReasoningTrace

KNOWLEDGE_QUERY_TEMPLATE = "{category} identification distinguishing features"

# Alignment score of a cue that was never focused (GF off): cosine 0 on the
# (1+cos)/2 scale, carrying no information either way.
UNFOCUSED_SCORE = 0.5


@dataclass(frozen=True)
class Stage2Config:
    top_n_snippets: int = 3
    max_cues: int = 4
    coarse_grid: tuple = (7, 7)
    fine_grid: tuple = (14, 14)
    support_level: float = 0.6
    tau: float = 0.5
    enhance_scale: int = 4
    dilation_radius: int = 1

    def __post_init__(self):
        if self.top_n_snippets < 1:
            raise ValueError("top_n_snippets must be positive")
        if self.max_cues < 1:
            raise ValueError("max_cues must be positive")
        for name in ("coarse_grid", "fine_grid"):
            grid = getattr(self, name)
            if len(grid) != 2 or grid[0] < 1 or grid[1] < 1:
                raise ValueError(f"{name} must be two positive integers")
        if not (self.fine_grid[0] > self.coarse_grid[0] and self.fine_grid[1] > self.coarse_grid[1]):
            raise ValueError("fine_grid must be strictly finer than coarse_grid on both axes")
        if not (0.0 < self.support_level <= 1.0):
            raise ValueError(f"support_level out of (0,1]: {self.support_level}")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError(f"tau out of (0,1]: {self.tau}")
        if self.enhance_scale < 1:
            raise ValueError("enhance_scale must be positive")
        if self.dilation_radius < 0:
            raise ValueError("dilation_radius must be non-negative")

    def to_dict(self) -> dict:
        return {
            "top_n_snippets": self.top_n_snippets,
            "max_cues": self.max_cues,
            "coarse_grid": list(self.coarse_grid),
            "fine_grid": list(self.fine_grid),
            "support_level": self.support_level,
            "tau": self.tau,
            "enhance_scale": self.enhance_scale,
            "dilation_radius": self.dilation_radius,
        }


class HeatMap:
    """Semantic similarity per grid cell, normalized to [0,1]."""

    __slots__ = ("grid", "peak", "peak_value")

    def __init__(self, grid: np.ndarray):
        arr = np.asarray(grid, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"heat grid must be 2-D and non-empty, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("heat values must lie in [0,1]")
        arr.flags.writeable = False
        object.__setattr__(self, "grid", arr)
        flat = int(arr.argmax())
        object.__setattr__(self, "peak", (flat // arr.shape[1], flat % arr.shape[1]))
        object.__setattr__(self, "peak_value", float(arr.max()))

    def __setattr__(self, name, value):
        raise AttributeError("HeatMap is immutable")


def heat_from_cosines(cosines: np.ndarray) -> HeatMap:
    """h(u) = (1 + cos) / 2, with cosines clamped to [-1, 1] so float noise
    from validated-but-imperfect unit vectors cannot escape the range."""
    cos = np.clip(np.asarray(cosines, dtype=np.float64), -1.0, 1.0)
    return HeatMap((1.0 + cos) / 2.0)


def support_mask_from_heat(heat: HeatMap, level: float, origin_bbox) -> Mask:
    """Binary mask of cells within level x peak of the peak heat."""
    cells = (heat.grid >= level * heat.peak_value).astype(np.float64)
    return Mask(cells, "coarse", origin_bbox)


def retrieve_knowledge(
    client: ToolClient,
    candidate: CandidateHypothesis,
    cfg: Stage2Config,
    toggles: Toggles,
    meter: Optional[CallMeter] = None,
    trace: Optional[ReasoningTrace] = None,
) -> list[KnowledgeSnippet]:
    """Factual descriptions of the candidate category, re-tagged with the
    candidate's canonical name regardless of what the tool labeled them."""
    if not toggles.kr:
        if trace is not None:
            trace.emit("2", "skipped_toggle", {"toggle": "kr"}, tool="text_search")
        return []
    body = {
        "query": KNOWLEDGE_QUERY_TEMPLATE.format(category=candidate.category),
        "top_n": cfg.top_n_snippets,
    }
    response = client.call("text_search", body, meter=meter, trace=trace, stage="2")
    snippets = []
    for raw in response["snippets"][: cfg.top_n_snippets]:
        snippets.append(
            KnowledgeSnippet(category=candidate.category, text=raw["text"], source=raw["source"])
        )
    return snippets


def parse_cues(
    client: ToolClient,
    snippets: Sequence[KnowledgeSnippet],
    candidate: CandidateHypothesis,
    cfg: Stage2Config,
    meter: Optional[CallMeter] = None,
    trace: Optional[ReasoningTrace] = None,
) -> list[DiscriminativeCue]:
    """Short visual cue phrases for the candidate.

    With snippets the reason tool distills them; without (knowledge
    retrieval off or dry) it falls back to the reasoner's own knowledge of
    the category name.
    """
    body: dict = {"mode": "cues", "question": candidate.category}
    if snippets:
        body["snippets"] = [s.to_dict() for s in snippets]
    response = client.call("reason", body, meter=meter, trace=trace, stage="2")
    cues: list[DiscriminativeCue] = []
    seen = set()
    for raw in response["cues"]:
        try:
            phrase = normalize_category(raw["phrase"])
        except EmptyCategory:
            continue
        if phrase in seen:
            continue
        seen.add(phrase)
        kind = raw.get("kind", "other")
        if kind not in CUE_KINDS:
            kind = "other"
        cues.append(DiscriminativeCue(index=len(cues), phrase=phrase, kind=kind))
        if len(cues) == cfg.max_cues:
            break
    if not cues:
        raise CueEmpty(f"no usable cues for candidate {candidate.category!r}")
    return cues


def _embed_crop(
    client: ToolClient,
    crop: np.ndarray,
    phrase: str,
    grid: tuple,
    meter: Optional[CallMeter],
    trace: Optional[ReasoningTrace],
) -> tuple[np.ndarray, np.ndarray]:
    """One embed call: the cue phrase plus the crop at the given grid.
    Returns (text vector, rows x cols x dim patch array)."""
    body = {
        "texts": [phrase],
        "image_crop": to_blob(crop),
        "grid": {"rows": grid[0], "cols": grid[1]},
    }
    response = client.call("embed", body, meter=meter, trace=trace, stage="2")
    text_vec = np.asarray(response["text_vecs"][0], dtype=np.float64)
    patches = np.asarray(response["patch_vecs"], dtype=np.float64)
    return text_vec, patches


def focus_global(
    client: ToolClient,
    crop: np.ndarray,
    cue: DiscriminativeCue,
    cfg: Stage2Config,
    origin_bbox,
    meter: Optional[CallMeter] = None,
    trace: Optional[ReasoningTrace] = None,
) -> tuple[HeatMap, Mask, float]:
    """Coarse pass: where in the crop does the cue phrase light up?"""
    text_vec, patches = _embed_crop(client, crop, cue.phrase, cfg.coarse_grid, meter, trace)
    heat = heat_from_cosines(patches @ text_vec)
    mask = support_mask_from_heat(heat, cfg.support_level, origin_bbox)
    return heat, mask, heat.peak_value


def _dilate_support(support: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation on a binary cell grid."""
    if radius == 0:
        return support.astype(bool)
    h, w = support.shape
    out = np.zeros((h, w), dtype=bool)
    for r, c in zip(*np.nonzero(support)):
        r0, r1 = max(0, r - radius), min(h, r + radius + 1)
        c0, c1 = max(0, c - radius), min(w, c + radius + 1)
        out[r0:r1, c0:c1] = True
    return out


def focus_local(
    client: ToolClient,
    crop: np.ndarray,
    coarse: Mask,
    cue: DiscriminativeCue,
    cfg: Stage2Config,
    meter: Optional[CallMeter] = None,
    trace: Optional[ReasoningTrace] = None,
) -> GroundedCue:
    """Fine pass: re-embed the coarse support region at the fine grid and
    carve the refined support out of it.

    The refined mask lives on the fine grid over the whole crop frame. Its
    support can only shrink relative to the dilated coarse support; when
    refinement returns nothing the coarse mask is kept instead.
    """
    support_img = mask_support_bbox(coarse, cfg.support_level)
    rel = relative_bbox(support_img, coarse.origin_bbox)
    sub = crop_rect(crop, rel)
    text_vec, patches = _embed_crop(client, sub, cue.phrase, cfg.fine_grid, meter, trace)
    local_heat = heat_from_cosines(patches @ text_vec)
    score = local_heat.peak_value
    local_pass = local_heat.grid >= cfg.support_level * local_heat.peak_value

    fr, fc = cfg.fine_grid
    rx0, ry0, rx1, ry1 = rel
    # Sample the local verdict at every fine cell of the whole crop frame:
    # cell centers are clamped into the support rect, so cells outside it
    # take the verdict of the nearest edge cell.
    cy = (np.arange(fr) + 0.5) / fr
    cx = (np.arange(fc) + 0.5) / fc
    cy = np.clip(cy, ry0, ry1)
    cx = np.clip(cx, rx0, rx1)
    row_idx = np.clip(((cy - ry0) / max(ry1 - ry0, 1e-12) * fr).astype(int), 0, fr - 1)
    col_idx = np.clip(((cx - rx0) / max(rx1 - rx0, 1e-12) * fc).astype(int), 0, fc - 1)
    sampled = local_pass[np.ix_(row_idx, col_idx)]

    # Containment bound: a refined cell must sit inside the dilated coarse
    # support, mapped down to fine resolution.
    coarse_support = coarse.grid >= cfg.support_level * float(coarse.grid.max())
    allowed = expand_cells(
        _dilate_support(coarse_support, cfg.dilation_radius).astype(np.float64), fr, fc
    ).astype(bool)

    refined = sampled & allowed
    if not refined.any():
        if trace is not None:
            trace.emit(
                "2",
                "ok",
                {"fallback": "coarse", "cue": cue.phrase},
            )
        return GroundedCue(cue=cue, mask=coarse, score=score)
    mask = Mask(refined.astype(np.float64), "refined", coarse.origin_bbox)
    return GroundedCue(cue=cue, mask=mask, score=score)


def ground_candidate(
    client: ToolClient,
    crop: np.ndarray,
    origin_bbox,
    cues: Sequence[DiscriminativeCue],
    cfg: Stage2Config,
    toggles: Toggles,
    meter: Optional[CallMeter] = None,
    trace: Optional[ReasoningTrace] = None,
) -> list[GroundedCue]:
    """Locate every cue in the crop, in cue index order."""
    if not toggles.gf:
        if trace is not None:
            trace.emit("2", "skipped_toggle", {"toggle": "gf"}, tool="embed")
        return [
            GroundedCue(cue=c, mask=whole_region_mask(origin_bbox), score=UNFOCUSED_SCORE)
            for c in cues
        ]
    grounded = []
    for cue in cues:
        _, coarse, _ = focus_global(client, crop, cue, cfg, origin_bbox, meter, trace)
        grounded.append(focus_local(client, crop, coarse, cue, cfg, meter, trace))
    return grounded


def should_enhance(scores: Sequence[float], tau: float, sr_on: bool) -> bool:
    """The enhancement gate, in one place so it can be tested exhaustively:
    fire only when enhancement is enabled and even the best cue aligns
    below tau."""
    return bool(sr_on) and max(scores) < tau


def best_cue_index(scores: Sequence[float]) -> int:
    """Index of the best-aligned cue (lowest index wins ties); this is the
    patch worth upscaling, anything weaker is likely noise."""
    best = max(scores)
    for i, s in enumerate(scores):
        if s == best:
            return i
    raise ValueError("scores must be non-empty")


def enhance_if_needed(
    client: ToolClient,
    crop: np.ndarray,
    origin_bbox,
    grounded: Sequence[GroundedCue],
    cfg: Stage2Config,
    toggles: Toggles,
    meter: Optional[CallMeter] = None,
    trace: Optional[ReasoningTrace] = None,
) -> tuple[np.ndarray, list[GroundedCue], bool]:
    """Upscale the best cue's support patch and re-ground when alignment is
    weak everywhere.

    Per cue the better of (original, re-grounded) survives, ties keeping
    the original, so kept scores never decrease. One round only; a failing
    enhance tool downgrades to the original grounding with a warning.
    """
    grounded = list(grounded)
    if not grounded:
        raise ValueError("grounded must be non-empty")
    scores = [g.score for g in grounded]
    if max(scores) >= cfg.tau:
        return crop, grounded, False
    if not toggles.sr:
        if trace is not None:
            trace.emit("2", "skipped_toggle", {"toggle": "sr"}, tool="enhance")
        return crop, grounded, False

    star = best_cue_index(scores)
    target = grounded[star]
    pixel_mask = Mask(
        expand_cells(target.mask.grid, crop.shape[0], crop.shape[1]),
        target.mask.provenance,
        target.mask.origin_bbox,
    )
    masked = mask_apply(crop, pixel_mask)
    support_img = mask_support_bbox(target.mask, cfg.support_level)
    rel = relative_bbox(support_img, origin_bbox)
    patch = crop_rect(masked, rel)
    body = {
        "image_crop": to_blob(patch),
        "mask": target.mask.to_dict(),
        "scale": cfg.enhance_scale,
    }
    try:
        response = client.call("enhance", body, meter=meter, trace=trace, stage="2")
    except ToolUnavailable as exc:
        if trace is not None:
            trace.emit("2", "error", {"warning": f"enhancement failed, keeping original grounding: {exc}"})
        return crop, grounded, False

    enhanced = from_blob(response["image_crop"])
    regrounded = ground_candidate(
        client,
        enhanced,
        support_img,
        [g.cue for g in grounded],
        cfg,
        toggles,
        meter=meter,
        trace=trace,
    )
    merged: list[GroundedCue] = []
    for old, new in zip(grounded, regrounded):
        if new.score > old.score:
            relabeled = Mask(new.mask.grid, "enhanced", new.mask.origin_bbox)
            merged.append(GroundedCue(cue=new.cue, mask=relabeled, score=new.score))
        else:
            merged.append(old)
    return enhanced, merged, True
