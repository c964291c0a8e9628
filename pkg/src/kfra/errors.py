"""Exception taxonomy for the engine.

Every error the public API raises derives from KfraError so callers can
catch the whole family. Tool-layer errors carry enough context to decide
between retry, degradation, and abort.
"""

from __future__ import annotations


class KfraError(Exception):
    """Base class for all engine errors."""


class EmptyCategory(KfraError):
    """Category text is empty after normalization."""


class ShapeError(KfraError):
    """Pixel grid and mask grid shapes do not line up."""


class EmptySupport(KfraError):
    """Mask has no cell above the support level (all-zero mask)."""


class CanonicalizationError(KfraError):
    """Request body cannot be canonicalized (NaN/Infinity or unserializable)."""


class ProtocolViolation(KfraError):
    """A tool response failed schema validation."""


class BudgetExceeded(KfraError):
    """Per-query tool call budget is exhausted."""


class ToolUnavailable(KfraError):
    """All transport attempts for a call failed.

    Carries the last transport error as __cause__ where available.
    """

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class FixtureError(KfraError):
    """Fixture bundle is malformed or a request misses every rule."""


class CandidateEmpty(KfraError):
    """Candidate generation produced zero hypotheses."""


class CueEmpty(KfraError):
    """Cue parsing produced zero cues for a candidate."""


class ConsistencyError(KfraError):
    """Evidence assembly received knowledge/grounding for an unknown candidate."""


class InferenceMismatch(KfraError):
    """Answer-mode tool probabilities cover none of the supplied choices."""


class QueryFailed(KfraError):
    """The reasoning loop could not produce any answer."""


class DatasetError(KfraError):
    """Dataset file violates the QA schema.

    line is 1-based; field names the offending field when known.
    """

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        detail = message
        if line is not None:
            detail = f"line {line}: {detail}"
        if field is not None:
            detail = f"{detail} (field: {field})"
        super().__init__(detail)
        self.line = line
        self.field = field


class ConfigError(KfraError):
    """Configuration key unknown, mistyped, or out of bounds."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
