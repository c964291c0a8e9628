"""Evaluation harness: QA datasets, accuracy reports, ablation grids, and
the synthetic microworld generator used for offline end-to-end runs."""

from .dataset import QAItem, load_dataset, save_dataset
from .evaluate import AblationRow, EvalRuntime, ablation_grid, evaluate, score_answer
from .report import Report, improvement, macro_average, render_ablation, render_report

__all__ = [
    "AblationRow",
    "EvalRuntime",
    "QAItem",
    "Report",
    "ablation_grid",
    "evaluate",
    "improvement",
    "load_dataset",
    "macro_average",
    "render_ablation",
    "render_report",
    "save_dataset",
    "score_answer",
]
