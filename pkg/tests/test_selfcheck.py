"""Tests for the embedded oracle suites."""

from __future__ import annotations

import numpy as np
import pytest

import codert.selfcheck as selfcheck
from codert.distillation import StepResult, baseline_step
from codert.lattice import loss_grad_logits
from codert.models import SequenceBatch
from codert.network import RnntParams
from codert.selfcheck import SUITES, relative_error, run_selfcheck, run_suite

QUICK_SUITES = [
    "lattice_vs_brute_force",
    "lattice_gradient",
    "distill_identities",
    "padding_neutrality",
    "beam1_equals_greedy",
    "beam_vs_exhaustive",
]


def test_relative_error():
    """Test the max-abs relative error and its zero floor."""
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0


@pytest.mark.parametrize("name", QUICK_SUITES)
def test_quick_suite_passes(name: str):
    """Test each fast oracle suite passes on its fixed seed."""
    result = run_suite(name)
    assert result.passed, result.failing_case
    assert result.cases == SUITES[name][1]
    assert result.worst_error <= 1.0


@pytest.mark.slow
@pytest.mark.parametrize("name", ["model_gradient", "distill_gradient"])
def test_gradient_suite_passes(name: str):
    """Test the finite-difference parameter suites pass."""
    result = run_suite(name)
    assert result.passed, result.failing_case


def test_suites_are_reproducible():
    """Test a suite gives the same worst error for the same seed."""
    a = run_suite("lattice_vs_brute_force", seed=5)
    b = run_suite("lattice_vs_brute_force", seed=5)
    assert a.worst_error == b.worst_error


def test_sign_flip_in_lattice_gradient_is_caught(monkeypatch: pytest.MonkeyPatch):
    """Test a deliberately broken gradient fails on its first case."""
    monkeypatch.setattr(
        selfcheck, "loss_grad_logits", lambda lattice, labels: -loss_grad_logits(lattice, labels)
    )
    result = run_suite("lattice_gradient")
    assert not result.passed
    assert result.cases == 1
    assert set(result.failing_case) == {"logits", "labels"}


def test_run_selfcheck_selects_suites():
    """Test only the requested suites run, in order."""
    results = run_selfcheck(["distill_identities", "beam1_equals_greedy"])
    assert [r.name for r in results] == ["distill_identities", "beam1_equals_greedy"]
    assert all(r.passed for r in results)


def test_gradient_suites_cover_fifty_instances():
    """Test both gradient suites draw at least 50 random instances."""
    assert SUITES["lattice_gradient"][1] >= 50
    assert SUITES["model_gradient"][1] >= 50


def test_probes_cover_vectors_and_gate_slices(rng: np.random.Generator):
    """Test biases are probed in full and every LSTM gate slice is sampled."""
    assert selfcheck._probe_indices("lstm0.b", (32,), rng, 2) == [(i,) for i in range(32)]

    rows = [idx[0] for idx in selfcheck._probe_indices("lstm0.w_h", (32, 8), rng, 2)]
    assert len(rows) == 8
    assert sorted({row // 8 for row in rows}) == [0, 1, 2, 3]

    assert len(selfcheck._probe_indices("proj.w", (5, 8), rng, 2)) == 2


def test_single_bias_error_in_model_gradient_is_caught(monkeypatch: pytest.MonkeyPatch):
    """Test one wrong forget-gate bias entry fails the model gradient suite."""

    def broken_step(params: RnntParams, batch: SequenceBatch, *args, **kwargs) -> StepResult:
        result = baseline_step(params, batch, *args, **kwargs)
        bias = result.grads["decoder"]["lstm0.b"]
        bias[bias.size // 4] += 0.5
        return result

    monkeypatch.setattr(selfcheck, "baseline_step", broken_step)
    result = run_suite("model_gradient")
    assert not result.passed
    assert result.cases == 1
