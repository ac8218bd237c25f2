"""Embedded oracle suites run by ``codert selfcheck``.

Each suite draws its cases from a fixed seed, compares an implementation
against an independent oracle and stops at the first failing case, which is
returned with the result so it can be reproduced.
"""

from __future__ import annotations

from collections.abc import Callable
from typing import Any

import numpy as np

from codert.config import DecoderConfig, DistillConfig, EncoderConfig
from codert.decoding import beam_search, encode, exhaustive_search, greedy_search
from codert.distillation import (
    baseline_step,
    colearn_step,
    encoder_distill_loss,
    topk_masked_distill_loss,
)
from codert.lattice import (
    JointLattice,
    brute_force_loss,
    loss_grad_logits,
    transducer_loss,
)
from codert.logging import get_logger, timed
from codert.models import SequenceBatch, SuiteResult, Utterance
from codert.network import RnntParams, init_params, model_forward
from codert.numerics import FloatArray, IntArray

logger = get_logger(__name__)

SEED = 20240415
LOSS_TOLERANCE = 1e-6
GRAD_TOLERANCE = 1e-4
PADDING_TOLERANCE = 1e-5
FD_STEP = 1e-3

Case = dict[str, Any]
CaseCheck = Callable[[np.random.Generator], tuple[float, Case]]


def relative_error(analytic: FloatArray, numeric: FloatArray) -> float:
    """max|a - n| / max(max|a|, max|n|, 1e-8)."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def toy_params(
    rng: np.random.Generator,
    classes: int = 5,
    input_dim: int = 3,
    separate_teacher: bool = False,
) -> RnntParams:
    """Tiny float64 student/teacher/decoder set used by the oracle suites."""
    student = EncoderConfig(
        num_layers=2, hidden_units=8, input_dim=input_dim, output_dim=classes,
        time_reduction_after_layer=1,
    )
    teacher = EncoderConfig(
        num_layers=2, hidden_units=10, input_dim=input_dim, output_dim=classes,
        time_reduction_after_layer=1,
    )
    decoder = DecoderConfig(embed_dim=4, num_layers=1, hidden_units=8, output_dim=classes)
    seeds = rng.integers(0, 2**31, size=4)
    groups = {
        "student_encoder": init_params(student, int(seeds[0])),
        "teacher_encoder": init_params(teacher, int(seeds[1])),
        "decoder": init_params(decoder, int(seeds[2])),
    }
    if separate_teacher:
        groups["teacher_decoder"] = init_params(decoder, int(seeds[3]))
    return RnntParams(groups).astype(np.float64)


def toy_batch(
    rng: np.random.Generator,
    batch_size: int,
    vocab: int,
    input_dim: int = 3,
    frames: tuple[int, int] = (3, 7),
    labels: tuple[int, int] = (1, 3),
) -> SequenceBatch:
    """Random mixed-length batch."""
    utterances = []
    for _ in range(batch_size):
        n_frames = int(rng.integers(frames[0], frames[1] + 1))
        n_labels = int(rng.integers(labels[0], labels[1] + 1))
        utterances.append(
            Utterance(
                frames=rng.standard_normal((n_frames, input_dim)).astype(np.float32),
                tokens=tuple(int(t) for t in rng.integers(0, vocab, size=n_labels)),
            )
        )
    return SequenceBatch.from_utterances(utterances)


def _random_lattice(
    rng: np.random.Generator, max_frames: int, max_labels: int, max_classes: int
) -> tuple[JointLattice, IntArray]:
    T = int(rng.integers(1, max_frames + 1))
    U = int(rng.integers(0, max_labels + 1))
    classes = int(rng.integers(2, max_classes + 1))
    logits = rng.normal(scale=2.0, size=(T, U + 1, classes))
    labels = rng.integers(0, classes - 1, size=U)
    return JointLattice(logits), labels.astype(np.int64)


def _lattice_case(rng: np.random.Generator) -> tuple[float, Case]:
    lattice, labels = _random_lattice(rng, 4, 3, 4)
    error = abs(transducer_loss(lattice, labels) - brute_force_loss(lattice, labels))
    return error / LOSS_TOLERANCE, {"logits": lattice.logits.tolist(), "labels": labels.tolist()}


def _lattice_grad_case(rng: np.random.Generator) -> tuple[float, Case]:
    lattice, labels = _random_lattice(rng, 4, 3, 5)
    analytic = loss_grad_logits(lattice, labels)
    numeric = np.zeros_like(lattice.logits)
    for idx in np.ndindex(*lattice.logits.shape):
        shifted = []
        for sign in (1.0, -1.0):
            logits = lattice.logits.copy()
            logits[idx] += sign * FD_STEP
            shifted.append(transducer_loss(JointLattice(logits), labels))
        numeric[idx] = (shifted[0] - shifted[1]) / (2 * FD_STEP)
    error = relative_error(analytic, numeric)
    return error / GRAD_TOLERANCE, {"logits": lattice.logits.tolist(), "labels": labels.tolist()}


def _probe_indices(
    name: str, shape: tuple[int, ...], rng: np.random.Generator, per_slice: int
) -> list[tuple[int, ...]]:
    """Coordinates checked for one tensor.

    Vectors are checked in full. Matrices get ``per_slice`` random entries in
    each gate slice of the first axis (four for LSTM weights, one otherwise).
    """
    if len(shape) == 1:
        return [(i,) for i in range(shape[0])]
    slices = 4 if name.startswith("lstm") else 1
    height = shape[0] // slices
    indices: list[tuple[int, ...]] = []
    for s in range(slices):
        for _ in range(per_slice):
            rest = tuple(int(rng.integers(n)) for n in shape[1:])
            indices.append((s * height + int(rng.integers(height)), *rest))
    return indices


def _params_fd_error(
    params: RnntParams,
    grads: dict[str, dict[str, FloatArray]],
    loss_fn: Callable[[RnntParams], float],
    groups: tuple[str, ...],
    rng: np.random.Generator,
    per_slice: int = 2,
) -> float:
    """Worst relative error over the probed coordinates of every tensor."""
    analytic: list[float] = []
    numeric: list[float] = []
    for group in groups:
        for name, tensor in params.groups[group].tensors.items():
            for idx in _probe_indices(name, tensor.shape, rng, per_slice):
                original = tensor[idx]
                values = []
                for sign in (1.0, -1.0):
                    tensor[idx] = original + sign * FD_STEP
                    values.append(loss_fn(params))
                tensor[idx] = original
                numeric.append((values[0] - values[1]) / (2 * FD_STEP))
                analytic.append(float(grads[group][name][idx]))
    return relative_error(np.array(analytic), np.array(numeric))


def _model_grad_case(rng: np.random.Generator) -> tuple[float, Case]:
    params = toy_params(rng)
    batch = toy_batch(rng, int(rng.integers(1, 3)), vocab=4)
    grads = baseline_step(params, batch).grads
    error = _params_fd_error(
        params, grads, lambda p: model_forward(p, batch).loss, ("student_encoder", "decoder"), rng
    )
    return error / GRAD_TOLERANCE, {"features": batch.features.tolist(),
                                    "labels": batch.labels.tolist()}


def _distill_grad_case(rng: np.random.Generator) -> tuple[float, Case]:
    params = toy_params(rng)
    batch = toy_batch(rng, 2, vocab=4)
    loss_type = "collapsed_kl" if rng.random() < 0.5 else "encoder_l2"
    top_k = None if loss_type == "collapsed_kl" or rng.random() < 0.5 else 3
    config = DistillConfig(lambda_=0.7, loss_type=loss_type, top_k=top_k)
    grads = colearn_step(params, batch, config).grads
    # the teacher side of the distillation term is a constant, so only the
    # student encoder's gradient equals the total-loss derivative
    error = _params_fd_error(
        params,
        grads,
        lambda p: colearn_step(p, batch, config).bundle.total,
        ("student_encoder",),
        rng,
    )
    return error / GRAD_TOLERANCE, {"loss_type": loss_type, "features": batch.features.tolist(),
                                    "labels": batch.labels.tolist()}


def _distill_identity_case(rng: np.random.Generator) -> tuple[float, Case]:
    frames, classes = int(rng.integers(1, 6)), int(rng.integers(2, 8))
    student = rng.normal(size=(frames, classes))
    teacher = rng.normal(size=(frames, classes))
    valid = int(rng.integers(1, frames + 1))
    case = {"student": student.tolist(), "teacher": teacher.tolist(), "valid_len": valid}
    full = encoder_distill_loss(student, teacher, valid)
    if topk_masked_distill_loss(student, teacher, valid, classes) != full:
        return np.inf, case
    if encoder_distill_loss(teacher, teacher, valid) != 0.0:
        return np.inf, case

    params = toy_params(rng)
    batch = toy_batch(rng, 2, vocab=4)
    t_grads = [
        colearn_step(params, batch, DistillConfig(lambda_=lam)).grads["teacher_encoder"]
        for lam in (0.0, 1.0)
    ]
    same = all(np.array_equal(t_grads[0][k], t_grads[1][k]) for k in t_grads[0])
    return (0.0 if same else np.inf), case


def _padding_case(rng: np.random.Generator) -> tuple[float, Case]:
    params = toy_params(rng)
    batch = toy_batch(rng, 3, vocab=4, frames=(2, 9), labels=(0, 4))
    batched = model_forward(params, batch).loss
    singles = []
    for b in range(batch.size):
        t = int(batch.feature_lengths[b])
        utt = Utterance(
            frames=batch.features[b, :t].astype(np.float32),
            tokens=tuple(int(x) for x in batch.label_sequence(b)),
        )
        singles.append(model_forward(params, SequenceBatch.from_utterances([utt])).loss)
    error = abs(batched - float(np.mean(singles)))
    return error / PADDING_TOLERANCE, {"features": batch.features.tolist(),
                                       "labels": batch.labels.tolist()}


def _beam_greedy_case(rng: np.random.Generator) -> tuple[float, Case]:
    params = toy_params(rng)
    frames = rng.standard_normal((int(rng.integers(2, 12)), 3))
    enc = encode(params, frames)
    decoder = params.decoder_for("student")
    greedy = greedy_search(enc, decoder, max_symbols=3)
    beam = beam_search(enc, decoder, beam=1, max_symbols=3)[0]
    same = greedy.tokens == beam.tokens and greedy.log_prob == beam.log_prob
    return (0.0 if same else np.inf), {"frames": frames.tolist()}


def _beam_exhaustive_case(rng: np.random.Generator) -> tuple[float, Case]:
    params = toy_params(rng, classes=3)
    frames = rng.standard_normal((int(rng.integers(1, 7)), 3))
    enc = encode(params, frames)
    decoder = params.decoder_for("student")
    best = exhaustive_search(enc, decoder, max_symbols=1)
    beam = beam_search(enc, decoder, beam=64, max_symbols=1)[0]
    error = abs(best.log_prob - beam.log_prob)
    return error / LOSS_TOLERANCE, {"frames": frames.tolist()}


SUITES: dict[str, tuple[CaseCheck, int]] = {
    "lattice_vs_brute_force": (_lattice_case, 200),
    "lattice_gradient": (_lattice_grad_case, 50),
    "model_gradient": (_model_grad_case, 50),
    "distill_gradient": (_distill_grad_case, 20),
    "distill_identities": (_distill_identity_case, 10),
    "padding_neutrality": (_padding_case, 10),
    "beam1_equals_greedy": (_beam_greedy_case, 50),
    "beam_vs_exhaustive": (_beam_exhaustive_case, 20),
}


def run_suite(name: str, seed: int = SEED) -> SuiteResult:
    """Run one suite; ``worst_error`` is reported in units of its tolerance."""
    check, cases = SUITES[name]
    rng = np.random.default_rng([seed, sorted(SUITES).index(name)])
    worst = 0.0
    failing: Case | None = None
    done = 0
    with timed(logger, f"suite {name}") as watch:
        for _ in range(cases):
            error, case = check(rng)
            done += 1
            worst = max(worst, error)
            if not error <= 1.0:
                failing = case
                break
    seconds = watch.seconds
    result = SuiteResult(
        name=name,
        passed=failing is None,
        cases=done,
        seconds=seconds,
        worst_error=worst,
        failing_case=failing,
    )
    logger.info(
        "%s: %s (%d cases, %.2fs)", name, "pass" if result.passed else "FAIL", done, seconds
    )
    return result


def run_selfcheck(names: list[str] | None = None, seed: int = SEED) -> list[SuiteResult]:
    """Run the named suites (all by default) in definition order."""
    return [run_suite(name, seed) for name in (names or list(SUITES))]
