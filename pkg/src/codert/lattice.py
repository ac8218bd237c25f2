"""Transducer loss over the T'×(U+1) alignment lattice.

Alphas, betas and gradients are computed per utterance in float64 on the
utterance's true lengths. The blank symbol is always the last vocabulary index.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy import special

from codert.exceptions import OracleLimitError, ShapeError, ValidationError
from codert.numerics import FloatArray, IntArray, log_softmax

BRUTE_FORCE_MAX_FRAMES = 6
BRUTE_FORCE_MAX_LABELS = 4


@dataclass
class JointLattice:
    """Joint logits h^k_{t,u} for one utterance and the tables derived from them."""

    logits: FloatArray
    log_probs: FloatArray = field(init=False)
    alpha: FloatArray | None = None
    beta: FloatArray | None = None
    grad_logits: FloatArray | None = None
    labels: IntArray | None = None

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 3:
            raise ShapeError(f"lattice logits must be [T', U+1, V+1], got {self.logits.shape}")
        if self.num_frames < 1:
            raise ValidationError("lattice needs at least one frame (T' >= 1)")
        self.log_probs = log_softmax(self.logits, axis=-1)

    @property
    def num_frames(self) -> int:
        return int(self.logits.shape[0])

    @property
    def num_labels(self) -> int:
        return int(self.logits.shape[1]) - 1

    @property
    def blank_index(self) -> int:
        return int(self.logits.shape[2]) - 1


def check_labels(labels: npt.ArrayLike, lattice: JointLattice) -> IntArray:
    """Validate a label sequence against a lattice and return it as int64."""
    tokens = np.asarray(labels, dtype=np.int64).reshape(-1)
    if tokens.size != lattice.num_labels:
        raise ShapeError(
            f"lattice has U+1={lattice.num_labels + 1} rows but {tokens.size} labels given"
        )
    if tokens.size and (tokens.min() < 0 or tokens.max() >= lattice.blank_index):
        raise ValidationError(f"labels must lie in [0, {lattice.blank_index}) (blank excluded)")
    return tokens


def _use_labels(lattice: JointLattice, tokens: IntArray) -> None:
    """Drop cached tables computed for a different label sequence."""
    if lattice.labels is None or not np.array_equal(lattice.labels, tokens):
        lattice.alpha = lattice.beta = lattice.grad_logits = None
        lattice.labels = tokens.copy()


def _transition_scores(lattice: JointLattice, labels: IntArray) -> tuple[FloatArray, FloatArray]:
    """Blank scores [T', U+1] and emit scores [T', U] of every lattice node."""
    blank = lattice.log_probs[:, :, lattice.blank_index]
    U = lattice.num_labels
    emit = lattice.log_probs[:, np.arange(U), labels] if U else np.zeros((lattice.num_frames, 0))
    return blank, emit


def forward_alphas(lattice: JointLattice, labels: npt.ArrayLike) -> FloatArray:
    """Fill and return ``lattice.alpha`` (log-space forward variables).

    alpha[t, u] is the log-probability of having consumed t frames and emitted
    the first u labels; alpha[0, 0] = 0.
    """
    tokens = check_labels(labels, lattice)
    _use_labels(lattice, tokens)
    blank, emit = _transition_scores(lattice, tokens)
    T, U = lattice.num_frames, lattice.num_labels
    alpha = np.full((T, U + 1), -np.inf)
    alpha[0, 0] = 0.0
    for u in range(1, U + 1):
        alpha[0, u] = alpha[0, u - 1] + emit[0, u - 1]
    for t in range(1, T):
        from_below = alpha[t - 1] + blank[t - 1]
        alpha[t, 0] = from_below[0]
        for u in range(1, U + 1):
            alpha[t, u] = np.logaddexp(from_below[u], alpha[t, u - 1] + emit[t, u - 1])
    lattice.alpha = alpha
    return alpha


def backward_betas(lattice: JointLattice, labels: npt.ArrayLike) -> FloatArray:
    """Fill and return ``lattice.beta`` (log-space backward variables).

    beta[t, u] is the log-probability of completing the alignment from node
    (t, u), including the final blank; beta[0, 0] is the total log-likelihood.
    """
    tokens = check_labels(labels, lattice)
    _use_labels(lattice, tokens)
    blank, emit = _transition_scores(lattice, tokens)
    T, U = lattice.num_frames, lattice.num_labels
    beta = np.full((T, U + 1), -np.inf)
    beta[T - 1, U] = blank[T - 1, U]
    for u in range(U - 1, -1, -1):
        beta[T - 1, u] = beta[T - 1, u + 1] + emit[T - 1, u]
    for t in range(T - 2, -1, -1):
        from_above = beta[t + 1] + blank[t]
        beta[t, U] = from_above[U]
        for u in range(U - 1, -1, -1):
            beta[t, u] = np.logaddexp(from_above[u], beta[t, u + 1] + emit[t, u])
    lattice.beta = beta
    return beta


def log_likelihood(lattice: JointLattice, labels: npt.ArrayLike) -> float:
    """Total log P(y|x) read off the forward table."""
    tokens = check_labels(labels, lattice)
    _use_labels(lattice, tokens)
    alpha = lattice.alpha if lattice.alpha is not None else forward_alphas(lattice, tokens)
    T, U = lattice.num_frames, lattice.num_labels
    return float(alpha[T - 1, U] + lattice.log_probs[T - 1, U, lattice.blank_index])


def transducer_loss(lattice: JointLattice, labels: npt.ArrayLike) -> float:
    """Negative log-likelihood of ``labels`` summed over all alignments."""
    return max(-log_likelihood(lattice, labels), 0.0)


def loss_grad_logits(lattice: JointLattice, labels: npt.ArrayLike) -> FloatArray:
    """Gradient of the transducer loss with respect to the joint logits.

    Uses node occupancies exp(alpha + beta - log P): for every node the
    softmax row is weighted by its occupancy and the path mass of the two
    outgoing transitions (blank, next label) is subtracted.
    """
    tokens = check_labels(labels, lattice)
    _use_labels(lattice, tokens)
    alpha = lattice.alpha if lattice.alpha is not None else forward_alphas(lattice, tokens)
    beta = lattice.beta if lattice.beta is not None else backward_betas(lattice, tokens)
    blank, emit = _transition_scores(lattice, tokens)
    T, U = lattice.num_frames, lattice.num_labels
    log_like = log_likelihood(lattice, tokens)

    # beta one step ahead along each transition; the terminal blank leads to log 1
    beta_after_blank = np.full((T, U + 1), -np.inf)
    beta_after_blank[:-1] = beta[1:]
    beta_after_blank[T - 1, U] = 0.0
    blank_mass = np.exp(alpha + blank + beta_after_blank - log_like)
    emit_mass = np.exp(alpha[:, :U] + emit + beta[:, 1:] - log_like)

    occupancy = blank_mass.copy()
    occupancy[:, :U] += emit_mass
    grad = np.exp(lattice.log_probs) * occupancy[:, :, None]
    grad[:, :, lattice.blank_index] -= blank_mass
    if U:
        grad[:, np.arange(U), tokens] -= emit_mass
    lattice.grad_logits = grad
    return grad


def compute_lattice(logits: npt.ArrayLike, labels: npt.ArrayLike) -> tuple[JointLattice, float]:
    """Build a lattice, run forward-backward and fill its gradient.

    Returns:
        The populated lattice and its loss.
    """
    lattice = JointLattice(np.asarray(logits, dtype=np.float64))
    forward_alphas(lattice, labels)
    backward_betas(lattice, labels)
    loss_grad_logits(lattice, labels)
    return lattice, transducer_loss(lattice, labels)


def brute_force_loss(lattice: JointLattice, labels: npt.ArrayLike) -> float:
    """Loss by explicit enumeration of every alignment (test oracle).

    Each alignment interleaves T'-1 blanks with the U labels and ends with the
    final blank at (T'-1, U); there are C(T'+U-1, U) of them.

    Raises:
        OracleLimitError: If T' > 6 or U > 4.
    """
    tokens = check_labels(labels, lattice)
    T, U = lattice.num_frames, lattice.num_labels
    if T > BRUTE_FORCE_MAX_FRAMES or U > BRUTE_FORCE_MAX_LABELS:
        raise OracleLimitError("oracle size limit")
    lp = lattice.log_probs
    phi = lattice.blank_index
    moves = T - 1 + U
    path_scores: list[float] = []
    for emit_positions in itertools.combinations(range(moves), U):
        emit_set = set(emit_positions)
        t = u = 0
        score = 0.0
        for move in range(moves):
            if move in emit_set:
                score += lp[t, u, tokens[u]]
                u += 1
            else:
                score += lp[t, u, phi]
                t += 1
        score += lp[T - 1, U, phi]
        path_scores.append(score)
    assert len(path_scores) == math.comb(moves, U)
    return -float(special.logsumexp(np.asarray(path_scores)))


def greedy_forced_path(lattice: JointLattice, labels: npt.ArrayLike) -> list[tuple[int, int]]:
    """Frame attribution of every label along the greedy posterior path.

    Starting at (0, 0), each step takes whichever outgoing transition carries
    more alignment mass (alpha + transition + beta); nodes on the last frame
    can only emit and nodes with all labels emitted can only take blank.

    Returns:
        ``(frame, label_position)`` for each of the U emissions, in order.
    """
    tokens = check_labels(labels, lattice)
    _use_labels(lattice, tokens)
    alpha = lattice.alpha if lattice.alpha is not None else forward_alphas(lattice, tokens)
    beta = lattice.beta if lattice.beta is not None else backward_betas(lattice, tokens)
    blank, emit = _transition_scores(lattice, tokens)
    T, U = lattice.num_frames, lattice.num_labels
    t = u = 0
    emissions: list[tuple[int, int]] = []
    while u < U:
        take_emit = t == T - 1
        if not take_emit:
            via_blank = alpha[t, u] + blank[t, u] + beta[t + 1, u]
            via_emit = alpha[t, u] + emit[t, u] + beta[t, u + 1]
            take_emit = via_emit >= via_blank
        if take_emit:
            emissions.append((t, u))
            u += 1
        else:
            t += 1
    return emissions
