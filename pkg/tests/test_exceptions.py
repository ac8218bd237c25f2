"""Tests for codert exception classes."""

from __future__ import annotations

import pytest

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


def test_codert_error_base():
    """Test base CodertError exception."""
    error = CodertError("Test error")
    assert str(error) == "Test error"
    assert isinstance(error, Exception)


@pytest.mark.parametrize(
    "exc_type",
    [
        CheckpointError,
        ConfigurationError,
        DiagnosticsError,
        NumericsError,
        OracleLimitError,
        StoreError,
        ValidationError,
    ],
)
def test_hierarchy(exc_type: type[CodertError]):
    """Test every error is catchable as CodertError."""
    with pytest.raises(CodertError):
        raise exc_type("boom")


def test_shape_error_is_validation_error():
    """Test ShapeError is a kind of ValidationError."""
    assert issubclass(ShapeError, ValidationError)


def test_divergence_error_carries_step():
    """Test DivergenceError records the failing step."""
    error = DivergenceError("diverged", step=12)
    assert str(error) == "diverged"
    assert error.step == 12
    assert DivergenceError("diverged").step is None


def test_selfcheck_error_carries_case():
    """Test SelfCheckError records the suite and failing case."""
    error = SelfCheckError("lattice_gradient", {"labels": [0, 1]})
    assert "lattice_gradient" in str(error)
    assert error.suite == "lattice_gradient"
    assert error.case == {"labels": [0, 1]}
