"""Canonical JSON form and the content digest built on it.

Canonical form: keys sorted recursively, separators without whitespace,
non-finite numbers rejected. Two logically equal values always produce the
same byte string, hence the same digest.
"""

from __future__ import annotations

import hashlib
import json
import math

from ..errors import CanonicalizationError

_SCALARS = (str, int, float, bool, type(None))


def _check(value, path: str) -> None:
    if isinstance(value, bool) or value is None or isinstance(value, (str, int)):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise CanonicalizationError(f"non-finite number at {path}: {value!r}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise CanonicalizationError(f"non-string key at {path}: {key!r}")
            _check(item, f"{path}.{key}")
        return
    raise CanonicalizationError(f"value at {path} is not JSON-serializable: {type(value).__name__}")


def canonical_json(value) -> str:
    """Serialize to the canonical JSON string form."""
    _check(value, "$")
    return json.dumps(value, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest_value(value) -> str:
    """sha256 hex digest of the canonical JSON form."""
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()
