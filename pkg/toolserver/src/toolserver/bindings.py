"""Bindings wire each tool kind to a named backend.

A bindings file is plain JSON and safe to commit: credentials are stored
as environment variable names and resolved only when a call needs them.
"""

import json
import os
from dataclasses import dataclass, field

from .wire import TOOL_KINDS


class BindingError(ValueError):
    """A bindings document cannot be used."""


@dataclass(frozen=True)
class AdapterBinding:
    """One tool kind wired to a backend with its settings."""

    kind: str
    backend: str
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TOOL_KINDS:
            raise BindingError(f"unknown tool kind: {self.kind!r}")
        if not isinstance(self.backend, str) or not self.backend:
            raise BindingError(f"binding for {self.kind!r} names no backend")
        if not isinstance(self.settings, dict):
            raise BindingError(f"settings for {self.kind!r} must be a JSON object")

    def credential(self):
        """Resolve the bound credential from the environment, or None.

        Resolution happens per call so rotated secrets take effect without
        a restart. The value is returned to the caller and nowhere else;
        it is never stored on the binding and never logged.
        """
        name = self.settings.get("credential_env")
        if name is None:
            return None
        value = os.environ.get(name)
        if value is None:
            raise BindingError(f"credential variable {name!r} is not set")
        return value


def default_bindings() -> dict:
    """Offline stub backends for all six kinds."""
    return {kind: AdapterBinding(kind=kind, backend="stub") for kind in TOOL_KINDS}


def load_bindings(path: str) -> dict:
    """Load a bindings file; every tool kind must be bound exactly once."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BindingError(f"cannot load bindings file {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("bindings"), list):
        raise BindingError("bindings file must be an object with a 'bindings' array")
    out: dict = {}
    for position, raw in enumerate(doc["bindings"]):
        if not isinstance(raw, dict):
            raise BindingError(f"binding {position} is not an object")
        binding = AdapterBinding(
            kind=raw.get("kind"),
            backend=raw.get("backend"),
            settings=raw.get("settings", {}),
        )
        if binding.kind in out:
            raise BindingError(f"duplicate binding for kind {binding.kind!r}")
        out[binding.kind] = binding
    missing = [kind for kind in TOOL_KINDS if kind not in out]
    if missing:
        raise BindingError(f"bindings file leaves kinds unbound: {', '.join(missing)}")
    return out
