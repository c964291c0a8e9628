"""Accuracy reports and plain-text table rendering.

Displayed numbers are rounded half-up to two decimals; the stored
aggregates keep full precision. Improvement columns subtract the rounded
values so the printed arithmetic is exact.
"""

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Sequence

from ..evidence import DIMENSIONS

CENT = Decimal("0.01")


def round2(value: float) -> Decimal:
    return Decimal(str(value)).quantize(CENT, rounding=ROUND_HALF_UP)


def fmt2(value: float) -> str:
    return str(round2(value))


def macro_average(accuracies: Sequence[float]) -> float:
    """Arithmetic mean of per-dimension accuracies."""
    if not accuracies:
        raise ValueError("macro_average needs at least one dimension")
    return sum(accuracies) / len(accuracies)


def improvement(row_macro: float, baseline_macro: float) -> Decimal:
    """Difference of the two displayed macro values, exact to 2 decimals."""
    return round2(row_macro) - round2(baseline_macro)


def fmt_improvement(delta: Decimal) -> str:
    return f"+{delta}" if delta >= 0 else str(delta)


@dataclass
class Report:
    """Aggregated accuracy for one evaluation run."""

    per_dimension: dict
    macro_avg: float
    micro_avg: float
    toggles: dict
    config_digest: str
    per_item: list = field(default_factory=list)

    @classmethod
    def from_items(cls, per_item: list, toggles: dict, config_digest: str) -> "Report":
        """Single construction path: aggregates derive from the item records."""
        if not per_item:
            raise ValueError("report needs at least one item record")
        per_dimension: dict = {}
        for record in per_item:
            dim = record["dimension"]
            cell = per_dimension.setdefault(dim, {"n": 0, "correct": 0})
            cell["n"] += 1
            cell["correct"] += 1 if record["correct"] else 0
        for cell in per_dimension.values():
            cell["accuracy"] = 100.0 * cell["correct"] / cell["n"]
        macro = macro_average([c["accuracy"] for c in per_dimension.values()])
        total = sum(c["n"] for c in per_dimension.values())
        correct = sum(c["correct"] for c in per_dimension.values())
        return cls(
            per_dimension=per_dimension,
            macro_avg=macro,
            micro_avg=100.0 * correct / total,
            toggles=dict(toggles),
            config_digest=config_digest,
            per_item=list(per_item),
        )

    def to_dict(self) -> dict:
        return {
            "per_dimension": self.per_dimension,
            "macro_avg": self.macro_avg,
            "micro_avg": self.micro_avg,
            "toggles": self.toggles,
            "config_digest": self.config_digest,
            "per_item": self.per_item,
        }


def _present_dimensions(report: Report) -> list[str]:
    ordered = [d for d in DIMENSIONS if d in report.per_dimension]
    extras = sorted(d for d in report.per_dimension if d not in DIMENSIONS)
    return ordered + extras


def render_report(report: Report) -> str:
    """Text table: one row per dimension, then the two averages."""
    lines = [f"{'dimension':<12}{'n':>6}{'correct':>10}{'accuracy':>10}"]
    for dim in _present_dimensions(report):
        cell = report.per_dimension[dim]
        lines.append(
            f"{dim:<12}{cell['n']:>6}{cell['correct']:>10}{fmt2(cell['accuracy']):>10}"
        )
    lines.append("")
    lines.append(f"macro_avg  {fmt2(report.macro_avg)}")
    lines.append(f"micro_avg  {fmt2(report.micro_avg)}")
    toggles = " ".join(
        f"{name}={'on' if report.toggles.get(name, True) else 'off'}"
        for name in sorted(report.toggles)
    )
    lines.append(f"toggles    {toggles}")
    lines.append(f"config     {report.config_digest[:12]}")
    return "\n".join(lines) + "\n"


TOGGLE_COLUMNS = ("kr", "vs", "od", "gf", "sr")


def render_ablation(rows: Sequence, baseline_macro: Optional[float] = None) -> str:
    """Seven-row grid: tool columns, macro accuracy, improvement over the
    first (baseline) row."""
    if not rows:
        raise ValueError("no ablation rows to render")
    if baseline_macro is None:
        baseline_macro = rows[0].report.macro_avg
    header = "".join(f"{name.upper():<4}" for name in TOGGLE_COLUMNS)
    lines = [f"{header}{'macro':>8}{'imp':>9}"]
    for row in rows:
        marks = "".join(
            f"{'x' if row.toggles.get(name, True) else '-':<4}" for name in TOGGLE_COLUMNS
        )
        delta = improvement(row.report.macro_avg, baseline_macro)
        lines.append(f"{marks}{fmt2(row.report.macro_avg):>8}{fmt_improvement(delta):>9}")
    return "\n".join(lines) + "\n"
