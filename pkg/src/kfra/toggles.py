"""Tool toggles: each switch disables one external tool and routes the
engine through that tool's degradation rule instead.

kr: knowledge retrieval (text_search)
vs: visual exemplar search (image_search)
od: open-vocabulary detection (detect)
gf: grounded focusing (embed)
sr: detail enhancement (enhance)

The reason tool has no toggle; without it there is no loop to run.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

TOGGLE_NAMES = ("kr", "vs", "od", "gf", "sr")

TOGGLE_TOOL_KIND = {
    "kr": "text_search",
    "vs": "image_search",
    "od": "detect",
    "gf": "embed",
    "sr": "enhance",
}


@dataclass(frozen=True)
class Toggles:
    kr: bool = True
    vs: bool = True
    od: bool = True
    gf: bool = True
    sr: bool = True

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in TOGGLE_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "Toggles":
        unknown = set(d) - set(TOGGLE_NAMES)
        if unknown:
            raise ValueError(f"unknown toggles: {sorted(unknown)}")
        return cls(**{k: bool(v) for k, v in d.items()})

    @classmethod
    def all_on(cls) -> "Toggles":
        return cls()

    @classmethod
    def all_off(cls) -> "Toggles":
        return cls(**{name: False for name in TOGGLE_NAMES})

    def without(self, name: str) -> "Toggles":
        if name not in TOGGLE_NAMES:
            raise ValueError(f"unknown toggle: {name!r}")
        return replace(self, **{name: False})

    def tool_enabled(self, kind: str) -> bool:
        """Whether the given tool kind is allowed under these toggles."""
        for name, mapped in TOGGLE_TOOL_KIND.items():
            if mapped == kind:
                return getattr(self, name)
        return True

    def disabled_kinds(self) -> set:
        return {TOGGLE_TOOL_KIND[n] for n in TOGGLE_NAMES if not getattr(self, n)}


def leave_one_out() -> dict:
    """The ablation grid minus the endpoints: one toggle off at a time."""
    return {name: Toggles().without(name) for name in TOGGLE_NAMES}


__all__ = ["Toggles", "TOGGLE_NAMES", "TOGGLE_TOOL_KIND", "leave_one_out"]
