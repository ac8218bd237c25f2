"""codert exception hierarchy."""

from __future__ import annotations

from typing import Any


class CodertError(Exception):
    """Base exception for all codert errors."""


class ConfigurationError(CodertError):
    """Invalid or missing configuration."""


class ValidationError(CodertError):
    """Inputs violate an operation's preconditions."""


class ShapeError(ValidationError):
    """Tensor dimensions do not agree."""


class NumericsError(CodertError):
    """Invalid input to a numeric primitive (empty reduction, negative mass)."""


class OracleLimitError(CodertError):
    """Exhaustive oracle asked to enumerate beyond its size guard."""


class DivergenceError(CodertError):
    """Non-finite gradients or losses; the training step was aborted."""

    def __init__(self, reason: str, step: int | None = None) -> None:
        super().__init__(reason)
        self.step = step


class CheckpointError(CodertError):
    """Checkpoint file is corrupt, truncated or of an unknown version."""


class StoreError(CodertError):
    """Corpus or metrics store operation failed."""


class DiagnosticsError(CodertError):
    """Diagnostic inputs are missing required fields."""


class SelfCheckError(CodertError):
    """An oracle suite failed; carries the failing case's inputs."""

    def __init__(self, suite: str, case: dict[str, Any]) -> None:
        super().__init__(f"selfcheck suite '{suite}' failed")
        self.suite = suite
        self.case = case
