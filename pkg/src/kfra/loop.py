"""Stage 3 and the controller: evidence assembly, evidence-conditioned
inference, and the self-corrective loop.

One query runs up to max_iterations passes. A pass executes Stage 1
(entities, exemplars, candidates), Stage 2 (knowledge, cues, focusing,
enhancement) per candidate, and Stage 3 (answer inference). Low answer
confidence widens the search: more exemplars, more candidates, a lower
detection floor, with candidates merged across passes. The answer with the
highest confidence seen anywhere wins.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BudgetExceeded,
    CandidateEmpty,
    ConsistencyError,
    CueEmpty,
    InferenceMismatch,
    KfraError,
    QueryFailed,
)
from .evidence import (
    AnswerDistribution,
    CandidateHypothesis,
    EvidenceTuple,
    ImageRef,
    Query,
    Region,
    mask_support_bbox,
    merge_candidates,
    normalize_category,
)
from .pixels import load_image
from .stages.grounding import (
    Stage2Config,
    enhance_if_needed,
    ground_candidate,
    parse_cues,
    retrieve_knowledge,
)
from .stages.hypothesis import (
    Stage1Config,
    detect_entities,
    generate_candidates,
    region_crop,
    retrieve_exemplars,
)
from .toggles import Toggles
from .tools.client import ToolClient
from .tools.protocol import CallMeter
from .trace import ReasoningTrace


@dataclass(frozen=True)
class LoopConfig:
    answer_threshold: float = 0.55
    max_iterations: int = 3
    exemplar_multiplier: float = 2.0
    candidate_multiplier: float = 1.0
    candidate_increment: int = 3
    floor_decrement: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.answer_threshold <= 1.0):
            raise ValueError(f"answer_threshold out of (0,1]: {self.answer_threshold}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.exemplar_multiplier < 1.0 or self.candidate_multiplier < 1.0:
            raise ValueError("widening multipliers must be >= 1")
        if self.candidate_increment < 0:
            raise ValueError("candidate_increment must be non-negative")
        if self.floor_decrement < 0.0:
            raise ValueError("floor_decrement must be non-negative")

    def to_dict(self) -> dict:
        return {
            "answer_threshold": self.answer_threshold,
            "max_iterations": self.max_iterations,
            "exemplar_multiplier": self.exemplar_multiplier,
            "candidate_multiplier": self.candidate_multiplier,
            "candidate_increment": self.candidate_increment,
            "floor_decrement": self.floor_decrement,
        }

    def widened(self, stage1: Stage1Config, iteration: int) -> tuple[int, int, float]:
        """(top_m, k_max, score_floor) for a 1-based iteration number."""
        step = iteration - 1
        top_m = int(round(stage1.top_m_exemplars * self.exemplar_multiplier**step))
        k_max = (
            int(round(stage1.k_max_candidates * self.candidate_multiplier**step))
            + self.candidate_increment * step
        )
        floor = max(0.0, stage1.score_floor - self.floor_decrement * step)
        return max(1, top_m), max(1, k_max), floor


def assemble_evidence(
    entity: Region,
    candidates: Sequence[CandidateHypothesis],
    knowledge_by_candidate: dict,
    grounded_by_candidate: dict,
) -> EvidenceTuple:
    """One entity's evidence: per-candidate snippets and grounded cues,
    strongest candidate first."""
    known = set(candidates)
    for key in list(knowledge_by_candidate) + list(grounded_by_candidate):
        if key not in known:
            raise ConsistencyError(f"evidence for unknown candidate {key.category!r}")
    ordered = sorted(candidates, key=lambda c: (-c.confidence, c.category))
    return EvidenceTuple(
        entity=entity,
        per_candidate=tuple(
            (
                cand,
                tuple(knowledge_by_candidate.get(cand, ())),
                tuple(grounded_by_candidate.get(cand, ())),
            )
            for cand in ordered
        ),
    )


def _clamp01(v: float) -> float:
    return min(1.0, max(0.0, float(v)))


def compact_evidence(evidence: Sequence[EvidenceTuple], support_level: float) -> list[dict]:
    """Wire form of the evidence: masks reduced to support boxes and peak
    scores so the reason request stays bounded. Full grids remain in the
    trace-side QueryResult."""
    out = []
    for tup in evidence:
        entry = {"entity": tup.entity.to_dict(), "per_candidate": []}
        for cand, snippets, grounded in tup.per_candidate:
            entry["per_candidate"].append(
                {
                    "candidate": cand.to_dict(),
                    "snippets": [s.to_dict() for s in snippets],
                    "cues": [
                        {
                            "cue": g.cue.to_dict(),
                            "support_bbox": [
                                _clamp01(v)
                                for v in mask_support_bbox(g.mask, support_level)
                            ],
                            "score": g.score,
                        }
                        for g in grounded
                    ],
                }
            )
        out.append(entry)
    return out


def restrict_to_choices(probs: dict, choices: Sequence[str]) -> AnswerDistribution:
    """Project raw answer probabilities onto the choice set.

    Matching is by canonical text; missing choices get 0. Zero total mass
    over the choices is an InferenceMismatch. The result is renormalized
    and ties break toward the lexicographically smallest choice.
    """
    by_canon: dict[str, float] = {}
    for key, value in probs.items():
        try:
            canon = normalize_category(key)
        except KfraError:
            continue
        value = _clamp01(value)
        if canon not in by_canon or value > by_canon[canon]:
            by_canon[canon] = value
    restricted = {choice: by_canon.get(normalize_category(choice), 0.0) for choice in choices}
    total = sum(restricted.values())
    if total <= 0.0:
        raise InferenceMismatch(
            f"answer distribution covers none of the choices {list(choices)}"
        )
    normalized = {k: v / total for k, v in restricted.items()}
    best = min(k for k, v in normalized.items() if v == max(normalized.values()))
    return AnswerDistribution(probs=normalized, best=best, confidence=normalized[best])


def open_answer(probs: dict) -> AnswerDistribution:
    """Open-ended answers: canonicalize keys (duplicates keep the max),
    clamp, and take the argmax with a lexicographic tie-break."""
    merged: dict[str, float] = {}
    for key, value in probs.items():
        try:
            canon = normalize_category(key)
        except KfraError:
            continue
        value = _clamp01(value)
        if canon not in merged or value > merged[canon]:
            merged[canon] = value
    if not merged:
        raise InferenceMismatch("answer distribution is empty")
    best = min(k for k, v in merged.items() if v == max(merged.values()))
    return AnswerDistribution(probs=merged, best=best, confidence=merged[best])


def infer_answer(
    client: ToolClient,
    image: ImageRef,
    query: Query,
    evidence: Sequence[EvidenceTuple],
    stage2: Stage2Config,
    meter: Optional[CallMeter] = None,
    trace: Optional[ReasoningTrace] = None,
) -> AnswerDistribution:
    """Stage 3: one reason call conditioned on the full evidence payload."""
    if not evidence:
        raise ValueError("evidence must be non-empty")
    body: dict = {
        "mode": "answer",
        "image": image.to_dict(),
        "question": query.question,
        "evidence": compact_evidence(evidence, stage2.support_level),
    }
    if query.choices is not None:
        body["choices"] = list(query.choices)
    response = client.call("reason", body, meter=meter, trace=trace, stage="3")
    if query.choices is not None:
        return restrict_to_choices(response["probs"], query.choices)
    return open_answer(response["probs"])


@dataclass(frozen=True)
class QueryResult:
    answer: AnswerDistribution
    evidence: tuple[EvidenceTuple, ...]
    iterations_used: int
    trace: ReasoningTrace

    def to_dict(self) -> dict:
        return {
            "answer": self.answer.to_dict(),
            "evidence": [t.to_dict() for t in self.evidence],
            "iterations_used": self.iterations_used,
            "trace": self.trace.to_dict(),
        }


def _start_event_summary(
    client: ToolClient,
    image: ImageRef,
    query: Query,
    stage1: Stage1Config,
    stage2: Stage2Config,
    loop: LoopConfig,
    toggles: Toggles,
) -> dict:
    """Everything replay needs to reconstruct the run."""
    return {
        "event": "query_start",
        "image": image.to_dict(),
        "query": query.to_dict(),
        "stage1": stage1.to_dict(),
        "stage2": stage2.to_dict(),
        "loop": loop.to_dict(),
        "toggles": toggles.to_dict(),
        "budget": client.budget.to_dict(),
        "cache_enabled": client.cache is not None,
    }


def run_query(
    client: ToolClient,
    image: ImageRef,
    pixels: np.ndarray,
    query: Query,
    stage1: Stage1Config,
    stage2: Stage2Config,
    loop: LoopConfig,
    toggles: Toggles,
) -> QueryResult:
    """Drive the full three-stage loop for one query.

    Returns the highest-confidence answer observed across iterations
    (earliest iteration wins ties). Raises QueryFailed only when no
    iteration produced an answer at all.
    """
    trace = ReasoningTrace()
    meter = CallMeter(client.budget.max_calls_per_query)
    trace.emit(
        "control", "ok", _start_event_summary(client, image, query, stage1, stage2, loop, toggles)
    )

    best: Optional[tuple[AnswerDistribution, tuple, int]] = None
    failure: Optional[KfraError] = None
    iterations_used = 0
    entities: list[Region] = []
    prev_floor: Optional[float] = None
    # Candidate lists survive widening, keyed by the entity's bbox.
    candidates_by_bbox: dict[tuple, list[CandidateHypothesis]] = {}

    for iteration in range(1, loop.max_iterations + 1):
        top_m, k_max, floor = loop.widened(stage1, iteration)
        if iteration > 1:
            trace.emit(
                "control",
                "ok",
                {
                    "event": "widening",
                    "iteration": iteration,
                    "top_m": top_m,
                    "k_max": k_max,
                    "score_floor": floor,
                },
            )
        iterations_used = iteration
        try:
            if prev_floor is None or floor != prev_floor:
                entities = detect_entities(
                    client, image, stage1, toggles, meter=meter, trace=trace, score_floor=floor
                )
                prev_floor = floor

            evidence: list[EvidenceTuple] = []
            for entity in entities:
                crop = region_crop(pixels, entity)
                exemplars = retrieve_exemplars(
                    client, crop, stage1, toggles, meter=meter, trace=trace, top_m=top_m
                )
                previous = candidates_by_bbox.get(entity.bbox, [])
                try:
                    fresh = generate_candidates(
                        client,
                        image,
                        query.question,
                        exemplars,
                        stage1,
                        meter=meter,
                        trace=trace,
                        k_max=k_max,
                    )
                except CandidateEmpty:
                    trace.emit(
                        "1",
                        "ok",
                        {"event": "candidates_empty", "entity": list(entity.bbox)},
                    )
                    fresh = []
                if not fresh and not previous:
                    continue
                merged = merge_candidates(previous, fresh, k_max)
                candidates_by_bbox[entity.bbox] = merged

                knowledge_by = {}
                grounded_by = {}
                for candidate in merged:
                    snippets = retrieve_knowledge(
                        client, candidate, stage2, toggles, meter=meter, trace=trace
                    )
                    knowledge_by[candidate] = snippets
                    try:
                        cues = parse_cues(
                            client, snippets, candidate, stage2, meter=meter, trace=trace
                        )
                    except CueEmpty:
                        trace.emit(
                            "2",
                            "ok",
                            {"event": "cues_empty", "candidate": candidate.category},
                        )
                        grounded_by[candidate] = []
                        continue
                    grounded = ground_candidate(
                        client,
                        crop,
                        entity.bbox,
                        cues,
                        stage2,
                        toggles,
                        meter=meter,
                        trace=trace,
                    )
                    _, grounded, _ = enhance_if_needed(
                        client,
                        crop,
                        entity.bbox,
                        grounded,
                        stage2,
                        toggles,
                        meter=meter,
                        trace=trace,
                    )
                    grounded_by[candidate] = grounded
                evidence.append(
                    assemble_evidence(entity, merged, knowledge_by, grounded_by)
                )

            if not evidence:
                trace.emit(
                    "control", "ok", {"event": "no_evidence", "iteration": iteration}
                )
                continue

            answer = infer_answer(
                client, image, query, evidence, stage2, meter=meter, trace=trace
            )
        except BudgetExceeded as exc:
            trace.emit(
                "control",
                "error",
                {"event": "budget_exhausted", "iteration": iteration, "detail": str(exc)},
            )
            failure = exc
            break
        except KfraError as exc:
            trace.emit(
                "control",
                "error",
                {
                    "event": "stage_failure",
                    "iteration": iteration,
                    "error": type(exc).__name__,
                    "detail": str(exc),
                },
            )
            failure = exc
            break

        trace.emit(
            "control",
            "ok",
            {
                "event": "iteration_done",
                "iteration": iteration,
                "confidence": answer.confidence,
                "best": answer.best,
            },
        )
        if best is None or answer.confidence > best[0].confidence:
            best = (answer, tuple(evidence), iteration)
        if answer.confidence >= loop.answer_threshold:
            break

    if best is None:
        detail = f": {failure}" if failure is not None else ""
        raise QueryFailed(f"no iteration produced an answer for {query.question!r}{detail}")
    answer, evidence_out, _ = best
    trace.emit(
        "control",
        "ok",
        {
            "event": "query_done",
            "iterations_used": iterations_used,
            "confidence": answer.confidence,
            "best": answer.best,
        },
    )
    return QueryResult(
        answer=answer,
        evidence=evidence_out,
        iterations_used=iterations_used,
        trace=trace,
    )


def replay_header(trace: ReasoningTrace) -> dict:
    """The recorded run parameters from a trace's first control event."""
    for event in trace.events:
        if event.stage == "control" and event.summary.get("event") == "query_start":
            return event.summary
    raise ValueError("trace has no query_start event")


def replay_query(
    trace: ReasoningTrace,
    client_factory,
    image_root: str = "",
) -> QueryResult:
    """Re-run the query recorded in a trace.

    client_factory(budget, cache_enabled) must build a ToolClient over the
    same fixture data as the original run, with a fresh cache when
    cache_enabled (intra-query cache hits are part of the recorded
    behavior). Bit-identical replay holds when the original run started
    cold; a run that was warmed by earlier queries replays its cache hits
    as ok events instead.
    """
    from .tools.protocol import ToolBudget

    header = replay_header(trace)
    budget = ToolBudget(**header["budget"])
    client = client_factory(budget, header["cache_enabled"])
    source = header["image"]["source"]
    if image_root:
        source = os.path.join(image_root, source)
    return run_query(
        client,
        ImageRef.from_dict(header["image"]),
        load_image(source),
        Query.from_dict(header["query"]),
        Stage1Config(
            vocabulary_seed=tuple(header["stage1"]["vocabulary_seed"]),
            score_floor=header["stage1"]["score_floor"],
            dedup_iou=header["stage1"]["dedup_iou"],
            top_m_exemplars=header["stage1"]["top_m_exemplars"],
            k_max_candidates=header["stage1"]["k_max_candidates"],
        ),
        Stage2Config(
            top_n_snippets=header["stage2"]["top_n_snippets"],
            max_cues=header["stage2"]["max_cues"],
            coarse_grid=tuple(header["stage2"]["coarse_grid"]),
            fine_grid=tuple(header["stage2"]["fine_grid"]),
            support_level=header["stage2"]["support_level"],
            tau=header["stage2"]["tau"],
            enhance_scale=header["stage2"]["enhance_scale"],
            dilation_radius=header["stage2"]["dilation_radius"],
        ),
        LoopConfig(**header["loop"]),
        Toggles.from_dict(header["toggles"]),
    )
