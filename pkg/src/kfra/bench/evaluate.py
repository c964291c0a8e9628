"""Run the engine over a dataset and aggregate accuracy."""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable, Optional, Sequence

from ..errors import EmptyCategory, QueryFailed
from ..evidence import normalize_category
from ..loop import LoopConfig, run_query
from ..pixels import load_image
from ..stages.grounding import Stage2Config
from ..stages.hypothesis import Stage1Config
from ..toggles import Toggles
from ..tools.protocol import TOOL_KINDS
from .dataset import QAItem
from .report import Report, improvement

# Answer matching is exact after canonicalization; there is no judge model.


def score_answer(predicted: Optional[str], gold: str, choices: Optional[Sequence[str]] = None) -> bool:
    """True iff predicted and gold canonicalize to the same text; with
    choices, both must additionally be members of the canonical choice set."""
    if predicted is None:
        return False
    try:
        pred = normalize_category(predicted)
        gold_c = normalize_category(gold)
    except EmptyCategory:
        return False
    if choices is not None:
        members = {normalize_category(c) for c in choices}
        if pred not in members or gold_c not in members:
            return False
    return pred == gold_c


@dataclass
class EvalRuntime:
    """Everything evaluate() needs besides the dataset: how to build a
    client, the stage configuration, and where image sources resolve."""

    client_factory: Callable
    stage1: Stage1Config
    stage2: Stage2Config
    loop: LoopConfig
    image_root: str = ""
    config_digest: str = ""
    jobs: int = 1


def _evaluate_item(item: QAItem, runtime: EvalRuntime, toggles: Toggles) -> dict:
    record: dict = {
        "id": item.id,
        "dimension": item.dimension,
        "gold": item.answer,
        "predicted": None,
        "correct": False,
        "iterations": 0,
        "tool_calls": 0,
        "calls_by_kind": {kind: 0 for kind in TOOL_KINDS},
    }
    client = runtime.client_factory()
    source = os.path.join(runtime.image_root, item.image.source)
    try:
        pixels = load_image(source)
        result = run_query(
            client,
            item.image,
            pixels,
            item.to_query(),
            runtime.stage1,
            runtime.stage2,
            runtime.loop,
            toggles,
        )
    except QueryFailed as exc:
        record["failure"] = str(exc)
        return record
    record["predicted"] = result.answer.best
    record["correct"] = score_answer(result.answer.best, item.answer, item.choices)
    record["iterations"] = result.iterations_used
    by_kind = {kind: len(result.trace.tool_calls(kind)) for kind in TOOL_KINDS}
    record["calls_by_kind"] = by_kind
    record["tool_calls"] = sum(by_kind.values())
    return record


def evaluate(items: Sequence[QAItem], runtime: EvalRuntime, toggles: Toggles) -> Report:
    """Evaluate every item and reduce to a Report, in dataset order.

    A QueryFailed item is scored incorrect with the failure recorded; any
    other exception is a harness bug and propagates.
    """
    if not items:
        raise ValueError("dataset must be non-empty")
    if runtime.jobs > 1:
        with ThreadPoolExecutor(max_workers=runtime.jobs) as pool:
            records = list(pool.map(lambda it: _evaluate_item(it, runtime, toggles), items))
    else:
        records = [_evaluate_item(item, runtime, toggles) for item in items]
    return Report.from_items(records, toggles.to_dict(), runtime.config_digest)


@dataclass
class AblationRow:
    toggles: dict
    report: Report
    improvement: Decimal


def ablation_rows() -> list[Toggles]:
    """Fixed grid order: all-off baseline, one-tool-off rows, all-on."""
    rows = [Toggles.all_off()]
    rows.extend(Toggles().without(name) for name in ("kr", "vs", "od", "gf", "sr"))
    rows.append(Toggles())
    return rows


def ablation_grid(items: Sequence[QAItem], runtime: EvalRuntime) -> list[AblationRow]:
    """Evaluate the seven-row toggle grid. Improvement is each row's
    displayed macro minus the baseline row's, exact to two decimals."""
    if not items:
        raise ValueError("dataset must be non-empty")
    reports = [(t, evaluate(items, runtime, t)) for t in ablation_rows()]
    baseline = reports[0][1].macro_avg
    return [
        AblationRow(
            toggles=toggles.to_dict(),
            report=report,
            improvement=improvement(report.macro_avg, baseline),
        )
        for toggles, report in reports
    ]
