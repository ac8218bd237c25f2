"""Tests for the transducer lattice: forward/backward, loss and gradient."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import special

from codert.exceptions import OracleLimitError, ShapeError, ValidationError
from codert.lattice import (
    JointLattice,
    backward_betas,
    brute_force_loss,
    compute_lattice,
    forward_alphas,
    greedy_forced_path,
    log_likelihood,
    loss_grad_logits,
    transducer_loss,
)
from codert.numerics import softmax
from codert.selfcheck import relative_error

UNIFORM_LOSS = math.log(13.5)


def _random_case(rng: np.random.Generator, frames: int, labels: int, classes: int):
    logits = rng.normal(scale=2.0, size=(frames, labels + 1, classes))
    tokens = rng.integers(0, classes - 1, size=labels)
    return JointLattice(logits), tokens


def test_uniform_lattice_loss():
    """Test two alignments of probability (1/3)^3 each give ln 13.5."""
    lattice = JointLattice(np.zeros((2, 2, 3)))
    assert transducer_loss(lattice, [0]) == pytest.approx(UNIFORM_LOSS, abs=1e-12)
    assert UNIFORM_LOSS == pytest.approx(2.6026896854443837, abs=1e-12)


def test_uniform_lattice_tables():
    """Test alpha and beta values of the uniform 2x2 lattice."""
    lattice = JointLattice(np.zeros((2, 2, 3)))
    alpha = forward_alphas(lattice, [0])
    beta = backward_betas(lattice, [0])
    third = math.log(1.0 / 3.0)
    assert alpha[0, 0] == 0.0
    assert alpha[0, 1] == pytest.approx(third)
    assert alpha[1, 0] == pytest.approx(third)
    assert alpha[1, 1] == pytest.approx(math.log(2.0 / 9.0))
    assert beta[1, 1] == pytest.approx(third)
    assert beta[0, 0] == pytest.approx(-UNIFORM_LOSS, abs=1e-12)


def test_single_frame_without_labels():
    """Test T'=1, U=0: the only alignment is the final blank."""
    logits = np.array([[[0.5, -1.0, 2.0]]])
    lattice, loss = compute_lattice(logits, [])
    expected = softmax(logits[0, 0])
    assert loss == pytest.approx(-math.log(expected[2]))
    onehot = np.array([0.0, 0.0, 1.0])
    assert np.allclose(lattice.grad_logits[0, 0], expected - onehot, atol=1e-12)


def test_peaked_path_has_near_zero_loss():
    """Test +20 on one alignment's transitions drives the loss to ~0."""
    logits = np.zeros((3, 3, 4))
    blank = 3
    logits[0, 0, 0] = 20.0  # emit label 0
    logits[0, 1, blank] = 20.0
    logits[1, 1, 2] = 20.0  # emit label 1
    logits[1, 2, blank] = 20.0
    logits[2, 2, blank] = 20.0
    assert transducer_loss(JointLattice(logits), [0, 2]) < 1e-3


def test_loss_matches_brute_force(rng: np.random.Generator):
    """Test the loss equals explicit alignment enumeration."""
    for _ in range(60):
        lattice, labels = _random_case(
            rng, int(rng.integers(1, 7)), int(rng.integers(0, 5)), int(rng.integers(2, 5))
        )
        assert transducer_loss(lattice, labels) == pytest.approx(
            brute_force_loss(lattice, labels), abs=1e-6
        )


def test_loss_is_non_negative(rng: np.random.Generator):
    """Test the loss is never negative."""
    for _ in range(20):
        lattice, labels = _random_case(rng, 4, 2, 3)
        assert transducer_loss(lattice, labels) >= 0.0


def test_forward_and_backward_agree(rng: np.random.Generator):
    """Test alpha and beta give the same log-likelihood."""
    lattice, labels = _random_case(rng, 5, 3, 4)
    forward_alphas(lattice, labels)
    beta = backward_betas(lattice, labels)
    assert log_likelihood(lattice, labels) == pytest.approx(beta[0, 0], abs=1e-10)


def test_every_frame_cut_carries_total_mass(rng: np.random.Generator):
    """Test each alignment crosses from frame t to t+1 exactly once."""
    lattice, labels = _random_case(rng, 5, 3, 4)
    alpha = forward_alphas(lattice, labels)
    beta = backward_betas(lattice, labels)
    blank = lattice.log_probs[:, :, lattice.blank_index]
    total = log_likelihood(lattice, labels)
    for t in range(lattice.num_frames - 1):
        cut = special.logsumexp(alpha[t] + blank[t] + beta[t + 1])
        assert cut == pytest.approx(total, abs=1e-9)


def test_gradient_rows_sum_to_zero(rng: np.random.Generator):
    """Test each node's gradient sums to zero over classes."""
    for _ in range(10):
        lattice, labels = _random_case(rng, 4, 3, 5)
        grad = loss_grad_logits(lattice, labels)
        assert np.allclose(grad.sum(axis=-1), 0.0, atol=1e-10)


def test_gradient_matches_finite_differences(rng: np.random.Generator):
    """Test the occupancy gradient on 50 random lattices of varied size."""
    h = 1e-3
    for _ in range(50):
        frames, labels_len, classes = (int(rng.integers(1, 5)), int(rng.integers(0, 4)),
                                       int(rng.integers(2, 6)))
        lattice, labels = _random_case(rng, frames, labels_len, classes)
        analytic = loss_grad_logits(lattice, labels)
        numeric = np.zeros_like(analytic)
        for idx in np.ndindex(*lattice.logits.shape):
            plus = lattice.logits.copy()
            minus = lattice.logits.copy()
            plus[idx] += h
            minus[idx] -= h
            numeric[idx] = (
                transducer_loss(JointLattice(plus), labels)
                - transducer_loss(JointLattice(minus), labels)
            ) / (2 * h)
        assert relative_error(analytic, numeric) < 1e-4, (lattice.logits.shape, labels)


def test_cached_tables_follow_the_labels(rng: np.random.Generator):
    """Test a lattice reused with other labels does not serve stale tables."""
    lattice, first = _random_case(rng, 4, 2, 5)
    second = np.array([3, 2]) if first.tolist() != [3, 2] else np.array([0, 1])
    fresh = JointLattice(lattice.logits)

    before = transducer_loss(lattice, first)
    after = transducer_loss(lattice, second)
    grad = loss_grad_logits(lattice, second)

    assert after == transducer_loss(fresh, second)
    assert after != before
    assert np.array_equal(grad, loss_grad_logits(JointLattice(lattice.logits), second))
    assert np.array_equal(lattice.labels, second)
    assert np.array_equal(lattice.alpha, forward_alphas(JointLattice(lattice.logits), second))


def test_brute_force_refuses_large_lattices():
    """Test enumeration refuses lattices past its size limit."""
    with pytest.raises(OracleLimitError, match="oracle size limit"):
        brute_force_loss(JointLattice(np.zeros((7, 1, 3))), [])
    with pytest.raises(OracleLimitError):
        brute_force_loss(JointLattice(np.zeros((2, 6, 3))), [0, 1, 0, 1, 0])


def test_lattice_needs_a_frame():
    """Test a lattice without frames is rejected."""
    with pytest.raises(ValidationError):
        JointLattice(np.zeros((0, 1, 3)))


def test_lattice_rejects_wrong_rank():
    """Test logits must be three-dimensional."""
    with pytest.raises(ShapeError):
        JointLattice(np.zeros((2, 3)))


def test_labels_must_match_rows():
    """Test the label count must match the lattice rows."""
    with pytest.raises(ShapeError):
        transducer_loss(JointLattice(np.zeros((2, 2, 3))), [0, 1])


def test_blank_is_not_a_label():
    """Test the blank index is rejected as a label."""
    with pytest.raises(ValidationError, match="blank excluded"):
        transducer_loss(JointLattice(np.zeros((2, 2, 3))), [2])


def test_greedy_forced_path_emits_each_label_once(rng: np.random.Generator):
    """Test the forced path emits every label once on non-decreasing frames."""
    for _ in range(10):
        lattice, labels = _random_case(rng, 5, 3, 4)
        path = greedy_forced_path(lattice, labels)
        assert [u for _, u in path] == [0, 1, 2]
        frames = [t for t, _ in path]
        assert frames == sorted(frames)
        assert all(0 <= t < lattice.num_frames for t in frames)


def test_greedy_forced_path_follows_peaked_alignment():
    """Test the forced path follows a dominant alignment."""
    logits = np.zeros((3, 3, 4))
    logits[0, 0, 0] = 20.0
    logits[0, 1, 3] = 20.0
    logits[1, 1, 2] = 20.0
    logits[1, 2, 3] = 20.0
    logits[2, 2, 3] = 20.0
    assert greedy_forced_path(JointLattice(logits), [0, 2]) == [(0, 0), (1, 1)]
