"""QA dataset model and JSON-lines loader."""

import json
from dataclasses import dataclass, field
from typing import Optional

from ..errors import DatasetError
from ..evidence import DIMENSIONS, ImageRef, Query


@dataclass(frozen=True)
class QAItem:
    """One benchmark question: an image, a typed question, and a gold answer."""

    id: str
    image: ImageRef
    dimension: str
    question: str
    answer: str
    choices: Optional[tuple[str, ...]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("QAItem.id must be non-empty")
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension: {self.dimension!r}")
        if not self.question:
            raise ValueError("QAItem.question must be non-empty")
        if not self.answer:
            raise ValueError("QAItem.answer must be non-empty")
        if self.choices is not None:
            object.__setattr__(self, "choices", tuple(self.choices))
            if len(self.choices) < 2:
                raise ValueError("choices must have length >= 2 when present")
            if self.answer not in self.choices:
                raise ValueError(f"answer {self.answer!r} not among choices")

    def to_query(self) -> Query:
        return Query(question=self.question, choices=self.choices, dimension=self.dimension)

    def to_dict(self) -> dict:
        out: dict = {
            "id": self.id,
            "image": self.image.to_dict(),
            "dimension": self.dimension,
            "question": self.question,
            "answer": self.answer,
        }
        if self.choices is not None:
            out["choices"] = list(self.choices)
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "QAItem":
        known = {"id", "image", "dimension", "question", "answer", "choices", "meta"}
        for key in d:
            if key not in known:
                raise ValueError(f"unknown field {key!r}")
        for key in ("id", "image", "dimension", "question", "answer"):
            if key not in d:
                raise ValueError(f"missing field {key!r}")
        try:
            image = ImageRef.from_dict(d["image"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"field 'image': {exc}") from exc
        choices = d.get("choices")
        return cls(
            id=str(d["id"]),
            image=image,
            dimension=d["dimension"],
            question=d["question"],
            answer=d["answer"],
            choices=tuple(choices) if choices is not None else None,
            meta=d.get("meta", {}),
        )


def load_dataset(path: str) -> list[QAItem]:
    """Read a JSON-lines dataset, one QAItem per line. Blank lines are
    skipped. Any malformed line raises DatasetError naming the line."""
    items: list[QAItem] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(raw, dict):
                raise DatasetError(f"{path}: expected an object", line=lineno)
            try:
                item = QAItem.from_dict(raw)
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}: {exc}", line=lineno) from exc
            if item.id in seen:
                raise DatasetError(
                    f"{path}: duplicate id {item.id!r} (first seen on line {seen[item.id]})",
                    line=lineno,
                )
            seen[item.id] = lineno
            items.append(item)
    return items


def save_dataset(path: str, items: list[QAItem]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), sort_keys=True) + "\n")
