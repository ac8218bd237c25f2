"""codert - RNN-Transducer training with co-learned encoder distillation."""

from codert.exceptions import (
    CheckpointError,
    CodertError,
    ConfigurationError,
    DiagnosticsError,
    DivergenceError,
    NumericsError,
    OracleLimitError,
    SelfCheckError,
    ShapeError,
    StoreError,
    ValidationError,
)
from codert.logging import get_logger, setup_logging

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "CodertError",
    "ConfigurationError",
    "DiagnosticsError",
    "DivergenceError",
    "NumericsError",
    "OracleLimitError",
    "SelfCheckError",
    "ShapeError",
    "StoreError",
    "ValidationError",
    "__version__",
    "get_logger",
    "setup_logging",
]
