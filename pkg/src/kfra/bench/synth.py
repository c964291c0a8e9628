"""Synthetic microworld: category pairs, rendered scenes, and a recorded
fixture bundle whose ground truth is known by construction.

The world is a flat attribute space. Each category is a body value plus a
small set of "field mark" patches at known cells; the embed oracle maps a
patch cell to the mark's unit vector only when the mark covers enough of
the cell, so spatial scale decides visibility. Seven category pairs are
built so that specific tools are load-bearing:

  - easy pairs (tree, gull): the deciding mark is visible at every scale
    and every tool configuration answers correctly.
  - crane pair: the deciding cue phrase only surfaces through retrieved
    knowledge snippets (KR).
  - skua pair: candidate generation without exemplars proposes only an
    off-list decoy (VS).
  - wren pair: the deciding mark is quarter-cell sized, visible only in
    the detected entity's fine grid, not at whole-image scale (OD).
  - finch pair: the deciding mark needs a grounding score that the
    unfocused fallback cannot reach (GF).
  - moth pair: the deciding mark is rendered in a degraded encoding that
    only the enhance tool converts back to its visible form (SR).

Generation runs the real engine over all seven toggle rows against a
semantic oracle and records every exchange, so the bundle replays any
row of the ablation grid bit-for-bit.
"""

import json
import os
import random
from dataclasses import dataclass

import numpy as np

from ..evidence import ImageRef, normalize_category
from ..loop import LoopConfig, run_query
from ..pixels import from_blob, load_image, save_image, to_blob
from ..stages.grounding import Stage2Config
from ..stages.hypothesis import Stage1Config
from ..toggles import Toggles
from ..tools.cache import DEFAULT_TTL_S
from ..tools.client import ToolClient
from ..tools.protocol import ToolBudget
from ..tools.transport import FunctionTransport, RecordingTransport, write_fixture_bundle
from .dataset import QAItem, save_dataset
from .evaluate import ablation_rows

# Geometry: one entity block per scene, aligned so a full-size mark is one
# coarse cell of the entity crop and exactly one fine cell of the whole
# image. 56 = 4 x 14 keeps every grid division integral.
IMAGE_SIZE = 56
ENTITY_TOP, ENTITY_LEFT, ENTITY_SIZE = 12, 16, 28
CELL = 4
ENTITY_BBOX = (
    ENTITY_LEFT / IMAGE_SIZE,
    ENTITY_TOP / IMAGE_SIZE,
    (ENTITY_LEFT + ENTITY_SIZE) / IMAGE_SIZE,
    (ENTITY_TOP + ENTITY_SIZE) / IMAGE_SIZE,
)
GENERIC_CELL = (1, 1)
DECIDING_CELL = (3, 3)

EMBED_DIM = 16
GENERIC_SLOT = 14
GENERIC_PHRASE = "upright stance marking"
BACKGROUND_COMPONENT = -0.25  # 16 * 0.25^2 = 1, exactly unit norm
COVERAGE_MIN = 0.35

BODY_BASE = 10.0
VISIBLE_BASE = 100.0
DEGRADED_BASE = 200.0

DETECT_SCORE = 0.93

# family, mechanism, member names, deciding cue phrases
PAIRS = (
    ("tree", "easy", ("maple tree", "oak tree"), ("lobed leaf mark", "rounded leaf mark")),
    ("crane", "kr", ("sand crane", "mud crane"), ("red crown patch", "white neck ring")),
    ("skua", "vs", ("king skua", "arctic skua"), ("barred tail band", "pale wing flash")),
    ("wren", "od", ("pin wren", "dot wren"), ("eye stripe fleck", "throat dot fleck")),
    ("finch", "gf", ("rust finch", "dust finch"), ("rust shoulder patch", "dust grey collar")),
    ("moth", "sr", ("fog moth", "haze moth"), ("forewing dot row", "hindwing dash row")),
    ("gull", "easy", ("glass gull", "stone gull"), ("ringed bill tip", "dark hood crown")),
)

VS_DECOY = "great skua"

# A correct answer needs the deciding cue grounded at least this strongly.
# Mechanisms that degrade grounding (not discovery) use the high bar.
ANSWER_BAR = {"easy": 0.0, "kr": 0.0, "vs": 0.0, "od": 0.9, "gf": 0.9, "sr": 0.9}

# Which two families feed each dimension: first half of the items come from
# the first (easy) family, the rest from the mechanism family.
DIMENSION_PLAN = {
    "object": ("tree", "skua"),
    "attribute": ("gull", "finch"),
    "action": ("tree", "wren"),
    "count": ("gull", "moth"),
    "knowledge": ("tree", "crane"),
    "reason": ("tree", "gull"),
}

QUESTION_TEMPLATES = {
    "object": "[{iid}] Which species does the outlined subject belong to?",
    "attribute": "[{iid}] Which species matches the plumage markings shown?",
    "action": "[{iid}] Which species is posed this way in the scene?",
    "count": "[{iid}] Counting the field marks, which species is present?",
    "knowledge": "[{iid}] Going by the field guides, which species is this?",
    "reason": "[{iid}] Weighing all the cues together, which species fits?",
}


@dataclass(frozen=True)
class Category:
    index: int
    name: str
    family: str
    mechanism: str
    phrase: str
    partner_index: int

    @property
    def slug(self) -> str:
        return self.name.replace(" ", "-")

    @property
    def body_value(self) -> float:
        return BODY_BASE + self.index

    @property
    def visible_value(self) -> float:
        return VISIBLE_BASE + self.index


def categories() -> list[Category]:
    out = []
    for p, (family, mechanism, names, phrases) in enumerate(PAIRS):
        for m in range(2):
            idx = 2 * p + m
            out.append(
                Category(
                    index=idx,
                    name=names[m],
                    family=family,
                    mechanism=mechanism,
                    phrase=phrases[m],
                    partner_index=2 * p + (1 - m),
                )
            )
    return out


CATEGORIES = categories()
BY_NAME = {c.name: c for c in CATEGORIES}
PAIR_BY_FAMILY = {family: mechanism for family, mechanism, _, _ in PAIRS}


def _cell_rect(cell: tuple[int, int]) -> tuple[int, int]:
    r, c = cell
    return ENTITY_TOP + CELL * r, ENTITY_LEFT + CELL * c


def render_scene(cat: Category) -> np.ndarray:
    """One canonical scene per category: body block, the shared generic
    mark, and the category's deciding mark."""
    img = np.zeros((IMAGE_SIZE, IMAGE_SIZE, 1), dtype=np.float32)
    img[
        ENTITY_TOP : ENTITY_TOP + ENTITY_SIZE, ENTITY_LEFT : ENTITY_LEFT + ENTITY_SIZE
    ] = cat.body_value
    gr, gc = _cell_rect(GENERIC_CELL)
    img[gr : gr + CELL, gc : gc + CELL] = VISIBLE_BASE + GENERIC_SLOT
    dr, dc = _cell_rect(DECIDING_CELL)
    if cat.mechanism == "od":
        # Quarter-cell mark: one fine cell of the entity crop, sub-threshold
        # at whole-image resolution.
        img[dr : dr + 2, dc : dc + 2] = cat.visible_value
    elif cat.mechanism == "sr":
        img[dr : dr + CELL, dc : dc + CELL] = DEGRADED_BASE + cat.index
    else:
        img[dr : dr + CELL, dc : dc + CELL] = cat.visible_value
    return img


def _basis(slot: int) -> list[float]:
    vec = [0.0] * EMBED_DIM
    vec[slot] = 1.0
    return vec


def _background_vec() -> list[float]:
    return [BACKGROUND_COMPONENT] * EMBED_DIM


VALUE_TO_SLOT = {VISIBLE_BASE + c.index: c.index for c in CATEGORIES}
VALUE_TO_SLOT[VISIBLE_BASE + GENERIC_SLOT] = GENERIC_SLOT
PHRASE_TO_SLOT = {c.phrase: c.index for c in CATEGORIES}
PHRASE_TO_SLOT[GENERIC_PHRASE] = GENERIC_SLOT


def _text_vec(phrase: str) -> list[float]:
    slot = PHRASE_TO_SLOT.get(phrase)
    return _basis(slot) if slot is not None else _background_vec()


def _pool_cell(block: np.ndarray) -> list[float]:
    """A cell embeds as a mark's vector iff that mark covers >= 35% of it."""
    values, counts = np.unique(block, return_counts=True)
    total = block.size
    best_slot, best_cover = None, 0.0
    for value, count in zip(values.tolist(), counts.tolist()):
        slot = VALUE_TO_SLOT.get(value)
        if slot is not None and count / total >= COVERAGE_MIN and count / total > best_cover:
            best_slot, best_cover = slot, count / total
    return _basis(best_slot) if best_slot is not None else _background_vec()


def _patch_vecs(crop: np.ndarray, rows: int, cols: int) -> list[list[list[float]]]:
    h, w = crop.shape[0], crop.shape[1]
    row_edges = [h * r // rows for r in range(rows + 1)]
    col_edges = [w * c // cols for c in range(cols + 1)]
    out = []
    for r in range(rows):
        line = []
        for c in range(cols):
            block = crop[row_edges[r] : row_edges[r + 1], col_edges[c] : col_edges[c + 1]]
            line.append(_pool_cell(block))
        out.append(line)
    return out


def _upscale(crop: np.ndarray, scale: int) -> np.ndarray:
    out = np.repeat(np.repeat(crop, scale, axis=0), scale, axis=1)
    # Enhancement recovers degraded marks: remap their values to visible.
    for cat in CATEGORIES:
        out[out == DEGRADED_BASE + cat.index] = cat.visible_value
    return out


KNOWLEDGE_SUFFIX = " identification distinguishing features"


def make_oracle(answer_table: dict, scene_by_source: dict):
    """A pure request -> response function implementing all six tools from
    the microworld's ground truth."""

    def oracle(request):
        kind, body = request.kind, request.body
        if kind == "detect":
            return {"regions": [{"bbox": list(ENTITY_BBOX), "score": DETECT_SCORE}]}

        if kind == "image_search":
            crop = from_blob(body["image_crop"])
            bodies = [c for c in CATEGORIES if np.any(crop == c.body_value)]
            if len(bodies) != 1:
                return {"exemplars": []}
            cat = bodies[0]
            return {
                "exemplars": [
                    {
                        "image": {
                            "source": f"exemplars/{cat.slug}-{rank}.json",
                            "width": 8,
                            "height": 8,
                        },
                        "caption": f"{cat.name} reference photo {rank}",
                        "source_url": f"offline://exemplars/{cat.slug}/{rank}",
                        "rank": rank,
                    }
                    for rank in range(1, body["top_m"] + 1)
                ]
            }

        if kind == "text_search":
            query = body["query"]
            name = query[: -len(KNOWLEDGE_SUFFIX)] if query.endswith(KNOWLEDGE_SUFFIX) else query
            cat = BY_NAME.get(name)
            if cat is None:
                return {
                    "snippets": [
                        {
                            "category": name,
                            "text": f"The {name} is a large dark seabird of open water.",
                            "source": "offline://fieldguide/misc",
                        }
                    ][: body["top_n"]]
                }
            return {
                "snippets": [
                    {
                        "category": cat.name,
                        "text": f"The {cat.name} is told apart by its {cat.phrase}.",
                        "source": f"offline://fieldguide/{cat.slug}",
                    }
                ][: body["top_n"]]
            }

        if kind == "embed":
            out: dict = {}
            if body.get("texts"):
                out["text_vecs"] = [_text_vec(t) for t in body["texts"]]
            if body.get("image_crop") is not None:
                crop = from_blob(body["image_crop"])
                grid = body["grid"]
                out["patch_vecs"] = _patch_vecs(crop, grid["rows"], grid["cols"])
            return out

        if kind == "enhance":
            crop = from_blob(body["image_crop"])
            return {"image_crop": to_blob(_upscale(crop, body["scale"]))}

        mode = body["mode"]
        if mode == "candidates":
            cat = scene_by_source[body["image"]["source"]]
            partner = CATEGORIES[cat.partner_index]
            if cat.mechanism == "vs" and not body.get("exemplars"):
                return {"candidates": [{"category": VS_DECOY, "confidence": 0.9}]}
            return {
                "candidates": [
                    {"category": cat.name, "confidence": 0.9},
                    {"category": partner.name, "confidence": 0.45},
                ]
            }

        if mode == "cues":
            cat = BY_NAME.get(body["question"])
            if cat is None:
                return {"cues": [{"phrase": GENERIC_PHRASE, "kind": "shape"}]}
            deciding = {"phrase": cat.phrase, "kind": "pattern"}
            generic = {"phrase": GENERIC_PHRASE, "kind": "shape"}
            if cat.mechanism == "sr":
                return {"cues": [deciding]}
            if cat.mechanism == "kr" and not body.get("snippets"):
                return {"cues": [generic]}
            return {"cues": [deciding, generic]}

        # mode == "answer"
        spec = answer_table[body["question"]]
        sufficient = False
        for entity in body["evidence"]:
            for pc in entity["per_candidate"]:
                if normalize_category(pc["candidate"]["category"]) != spec["true"]:
                    continue
                for cue in pc["cues"]:
                    if cue["cue"]["phrase"] == spec["deciding"] and cue["score"] >= spec["bar"]:
                        sufficient = True
        gold, other = spec["gold"], spec["other"]
        probs = {gold: 0.95, other: 0.05} if sufficient else {gold: 0.05, other: 0.95}
        return {"probs": probs, "rationale": "microworld ground truth"}

    return oracle


def engine_settings() -> dict:
    """The configuration both generation and evaluation must share; any
    drift would change request digests and miss the recorded fixtures."""
    return {
        "endpoints": {"default": "fixtures"},
        "stage1": Stage1Config().to_dict(),
        "stage2": Stage2Config(tau=0.7).to_dict(),
        "loop": LoopConfig().to_dict(),
        "budget": ToolBudget(max_calls_per_query=128).to_dict(),
        "cache": {"dir": "cache", "ttl_s": DEFAULT_TTL_S, "enabled": True},
        "toggles": Toggles().to_dict(),
    }


@dataclass(frozen=True)
class SynthResult:
    out_dir: str
    dataset_path: str
    fixture_dir: str
    config_path: str
    items: tuple


def synth_generate(seed: int, out_dir: str, items_per_dimension: int = 10) -> SynthResult:
    """Build the microworld under out_dir: images/, dataset.jsonl, a
    recorded fixtures/ bundle covering all seven toggle rows, and the
    config.json the evaluation must load. Byte-identical for equal seeds."""
    if items_per_dimension < 2:
        raise ValueError("items_per_dimension must be >= 2")
    rng = random.Random(seed)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)

    scene_by_source: dict[str, Category] = {}
    for cat in CATEGORIES:
        source = f"images/{cat.slug}.json"
        save_image(os.path.join(out_dir, source), render_scene(cat))
        scene_by_source[source] = cat

    items: list[QAItem] = []
    answer_table: dict[str, dict] = {}
    counter = 0
    for dimension in DIMENSION_PLAN:
        easy_family, mech_family = DIMENSION_PLAN[dimension]
        for i in range(items_per_dimension):
            family = easy_family if i < items_per_dimension // 2 else mech_family
            pair_index = next(p for p, row in enumerate(PAIRS) if row[0] == family)
            member = rng.randint(0, 1)
            gold = CATEGORIES[2 * pair_index + member]
            partner = CATEGORIES[gold.partner_index]
            iid = f"mw-{counter:03d}"
            counter += 1
            question = QUESTION_TEMPLATES[dimension].format(iid=iid)
            items.append(
                QAItem(
                    id=iid,
                    image=ImageRef(source=f"images/{gold.slug}.json", width=IMAGE_SIZE, height=IMAGE_SIZE),
                    dimension=dimension,
                    question=question,
                    answer=gold.name,
                    choices=tuple(sorted((gold.name, partner.name))),
                    meta={"family": family, "mechanism": gold.mechanism},
                )
            )
            answer_table[question] = {
                "true": normalize_category(gold.name),
                "deciding": gold.phrase,
                "bar": ANSWER_BAR[gold.mechanism],
                "gold": gold.name,
                "other": partner.name,
            }

    dataset_path = os.path.join(out_dir, "dataset.jsonl")
    save_dataset(dataset_path, items)

    settings = engine_settings()
    stage1 = Stage1Config()
    stage2 = Stage2Config(tau=0.7)
    loop = LoopConfig()
    budget = ToolBudget(max_calls_per_query=128)

    oracle = make_oracle(answer_table, scene_by_source)
    recorder = RecordingTransport(FunctionTransport(oracle))
    for toggles in ablation_rows():
        for item in items:
            client = ToolClient(recorder, budget)
            pixels = load_image(os.path.join(out_dir, item.image.source))
            run_query(client, item.image, pixels, item.to_query(), stage1, stage2, loop, toggles)

    fixture_dir = os.path.join(out_dir, "fixtures")
    write_fixture_bundle(fixture_dir, recorder.recorded)

    config_path = os.path.join(out_dir, "config.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(settings, fh, sort_keys=True, indent=2)
        fh.write("\n")

    return SynthResult(
        out_dir=out_dir,
        dataset_path=dataset_path,
        fixture_dir=fixture_dir,
        config_path=config_path,
        items=tuple(items),
    )
