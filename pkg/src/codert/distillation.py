"""Encoder distillation losses and the per-mode training steps.

Loss composition (per step):

    total = rnnt(student) + rnnt(teacher) + lambda * distill

The teacher branch of every distillation term is a constant: gradients from
``distill`` reach the student encoder (and, for the lattice KL variant, the
student's joint inputs) but never the teacher.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from codert.config import DistillConfig
from codert.exceptions import ShapeError, ValidationError
from codert.lattice import JointLattice
from codert.models import LossBundle, SequenceBatch
from codert.network import (
    DecoderOutput,
    EncoderOutput,
    JointResult,
    ParamDict,
    RnntParams,
    decoder_backward,
    decoder_forward,
    encoder_backward,
    encoder_forward,
    joint_backward,
    joint_forward,
    joint_loss,
)
from codert.numerics import FloatArray, IntArray, top_k_mask

KL_STUDENT_FLOOR = 1e-12


def _check_pair(student: FloatArray, teacher: FloatArray, valid_len: int) -> None:
    if student.shape != teacher.shape or student.ndim != 2:
        raise ShapeError(
            f"student/teacher encoder logits differ: {student.shape} vs {teacher.shape}"
        )
    if not 1 <= valid_len <= student.shape[0]:
        raise ValidationError(f"valid_len={valid_len} outside [1, {student.shape[0]}]")


def encoder_distill_loss(
    student_enc: npt.ArrayLike, teacher_enc: npt.ArrayLike, valid_len: int
) -> float:
    """Mean squared difference over valid frames and all V+1 logit dimensions."""
    return encoder_distill_loss_and_grad(student_enc, teacher_enc, valid_len)[0]


def encoder_distill_loss_and_grad(
    student_enc: npt.ArrayLike, teacher_enc: npt.ArrayLike, valid_len: int
) -> tuple[float, FloatArray]:
    """Full L2 loss and its gradient w.r.t. the student logits.

    The gradient is 2 (S - T) / (valid_len * (V+1)) on valid frames, 0 elsewhere.
    """
    s = np.asarray(student_enc, dtype=np.float64)
    t = np.asarray(teacher_enc, dtype=np.float64)
    _check_pair(s, t, valid_len)
    diff = s[:valid_len] - t[:valid_len]
    denom = valid_len * s.shape[1]
    grad = np.zeros_like(s)
    grad[:valid_len] = 2.0 * diff / denom
    return float((diff**2).sum() / denom), grad


def _selection_mask(
    student: FloatArray, teacher: FloatArray, k: int, source: str
) -> npt.NDArray[np.bool_]:
    if source == "teacher":
        return top_k_mask(teacher, k)
    if source == "student":
        return top_k_mask(student, k)
    return top_k_mask(teacher, k) | top_k_mask(student, k)


def topk_masked_distill_loss_and_grad(
    student_enc: npt.ArrayLike,
    teacher_enc: npt.ArrayLike,
    valid_len: int,
    k: int,
    source: str = "teacher",
) -> tuple[float, FloatArray]:
    """L2 loss restricted to the top-``k`` logits of each frame.

    Each frame contributes the mean over its selected entries; frames are then
    averaged. With k = V+1 this is :func:`encoder_distill_loss_and_grad`.
    """
    s = np.asarray(student_enc, dtype=np.float64)
    t = np.asarray(teacher_enc, dtype=np.float64)
    _check_pair(s, t, valid_len)
    if not 1 <= k <= s.shape[1]:
        raise ValidationError(f"top_k={k} out of range [1, {s.shape[1]}]")
    if k == s.shape[1]:
        return encoder_distill_loss_and_grad(s, t, valid_len)
    mask = _selection_mask(s[:valid_len], t[:valid_len], k, source)
    counts = mask.sum(axis=1, keepdims=True)
    diff = (s[:valid_len] - t[:valid_len]) * mask
    grad = np.zeros_like(s)
    grad[:valid_len] = 2.0 * diff / (counts * valid_len)
    return float(((diff**2) / counts).sum() / valid_len), grad


def topk_masked_distill_loss(
    student_enc: npt.ArrayLike,
    teacher_enc: npt.ArrayLike,
    valid_len: int,
    k: int,
    source: str = "teacher",
) -> float:
    """Top-k masked L2 loss, k entries chosen per frame from ``source``'s logits."""
    return topk_masked_distill_loss_and_grad(student_enc, teacher_enc, valid_len, k, source)[0]


def _bucket_index(labels: IntArray, num_rows: int, num_classes: int) -> IntArray:
    """[U+1, V+1] bucket id per class: 0 = next label, 1 = blank, 2 = remainder."""
    index = np.full((num_rows, num_classes), 2, dtype=np.int64)
    index[:, num_classes - 1] = 1
    if labels.size:
        index[np.arange(labels.size), labels] = 0
    return index


def collapse_buckets(probs: npt.ArrayLike, labels: npt.ArrayLike) -> FloatArray:
    """Collapse lattice posteriors [T', U+1, V+1] into (next label, blank, rest).

    On the last row (all labels emitted) the next-label bucket is empty.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.ndim != 3 or p.shape[1] != y.size + 1:
        raise ShapeError(f"lattice probabilities {p.shape} do not match {y.size} labels")
    index = _bucket_index(y, p.shape[1], p.shape[2])
    onehot = index[None, :, :, None] == np.arange(3)
    buckets: FloatArray = (p[..., None] * onehot).sum(axis=2)
    return buckets


def _bucket_kl(pt: FloatArray, ps: FloatArray) -> FloatArray:
    safe_ps = np.maximum(ps, KL_STUDENT_FLOOR)
    safe_pt = np.where(pt > 0, pt, 1.0)
    kl = np.where(pt > 0, pt * (np.log(safe_pt) - np.log(safe_ps)), 0.0).sum(axis=-1)
    # KL >= 0; nearly equal posteriors can round to -1e-16
    clamped: FloatArray = np.maximum(kl, 0.0)
    return clamped


def collapsed_kl_distill(
    student_lattice_probs: npt.ArrayLike,
    teacher_lattice_probs: npt.ArrayLike,
    labels: npt.ArrayLike,
) -> float:
    """Mean KL(teacher || student) over lattice nodes of the 3-bucket posteriors.

    Student buckets are floored at 1e-12 so an empty student bucket facing a
    non-empty teacher bucket stays finite.
    """
    ps = collapse_buckets(student_lattice_probs, labels)
    pt = collapse_buckets(teacher_lattice_probs, labels)
    if ps.shape != pt.shape:
        raise ShapeError("student and teacher lattices differ in shape")
    return float(_bucket_kl(pt, ps).mean())


def collapsed_kl_grad(
    student_lattice_probs: npt.ArrayLike,
    teacher_lattice_probs: npt.ArrayLike,
    labels: npt.ArrayLike,
) -> FloatArray:
    """Gradient of :func:`collapsed_kl_distill` w.r.t. the student lattice logits.

    Per node and class k in bucket b: p_k - p_k * pt_b / ps_b, divided by the
    number of nodes.
    """
    p = np.asarray(student_lattice_probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    ps = collapse_buckets(p, y)
    pt = collapse_buckets(teacher_lattice_probs, y)
    ratio = pt / np.maximum(ps, KL_STUDENT_FLOOR)
    index = _bucket_index(y, p.shape[1], p.shape[2])
    ratio_per_class = np.take_along_axis(ratio, np.broadcast_to(index, p.shape), axis=-1)
    grad: FloatArray = (p - p * ratio_per_class) / (p.shape[0] * p.shape[1])
    return grad


def total_loss(
    rnnt_student: float,
    rnnt_teacher: float,
    distill: float,
    config: DistillConfig,
    *,
    teacher_frozen: bool = False,
) -> LossBundle:
    """Compose the step loss; a frozen teacher contributes no transducer term."""
    teacher_term = 0.0 if teacher_frozen else rnnt_teacher
    return LossBundle(
        rnnt_student=rnnt_student,
        rnnt_teacher=teacher_term,
        distill=distill,
        total=rnnt_student + teacher_term + config.lambda_ * distill,
    )


@dataclass
class DistillTerm:
    """Batch-mean distillation loss and the student-side gradients it induces."""

    loss: float
    d_student_enc: FloatArray
    d_student_dec: FloatArray | None = None


def _check_frame_rates(student: EncoderOutput, teacher: EncoderOutput) -> None:
    if not np.array_equal(student.reduced_lengths, teacher.reduced_lengths):
        raise ShapeError(
            "teacher and student encoders produced different frame counts: "
            f"{teacher.reduced_lengths.tolist()} vs {student.reduced_lengths.tolist()}"
        )


def encoder_l2_term(
    student: EncoderOutput, teacher: EncoderOutput, config: DistillConfig
) -> DistillTerm:
    """Encoder distillation loss averaged over the utterances of a batch."""
    _check_frame_rates(student, teacher)
    B = student.logits.shape[0]
    d_enc = np.zeros_like(student.logits)
    total = 0.0
    for b in range(B):
        n = int(student.reduced_lengths[b])
        if config.top_k is None:
            loss, grad = encoder_distill_loss_and_grad(
                student.logits[b], teacher.logits[b], n
            )
        else:
            loss, grad = topk_masked_distill_loss_and_grad(
                student.logits[b], teacher.logits[b], n, config.top_k, config.top_k_source
            )
        total += loss
        d_enc[b] = grad / B
    return DistillTerm(total / B, d_enc)


def teacher_student_mse(student: EncoderOutput, teacher: EncoderOutput) -> float:
    """Mean squared teacher-student encoder-logit error over a batch."""
    _check_frame_rates(student, teacher)
    B = student.logits.shape[0]
    return sum(
        encoder_distill_loss(student.logits[b], teacher.logits[b], int(student.reduced_lengths[b]))
        for b in range(B)
    ) / B


def _teacher_lattices(teacher: EncoderOutput, decoder: DecoderOutput) -> list[JointLattice]:
    return [
        JointLattice(joint_forward(teacher.utterance(b), decoder.utterance(b)))
        for b in range(teacher.logits.shape[0])
    ]


def collapsed_kl_term(
    student: JointResult,
    teacher_lattices: list[JointLattice],
    batch: SequenceBatch,
    enc_shape: tuple[int, ...],
    dec_shape: tuple[int, ...],
) -> DistillTerm:
    """Lattice-level 3-bucket KL averaged over utterances, with student gradients."""
    B = batch.size
    d_enc = np.zeros(enc_shape)
    d_dec = np.zeros(dec_shape)
    total = 0.0
    for b, (s_lat, t_lat) in enumerate(zip(student.lattices, teacher_lattices, strict=True)):
        if s_lat.logits.shape != t_lat.logits.shape:
            raise ShapeError("student and teacher lattices differ in shape")
        labels = batch.label_sequence(b)
        ps, pt = np.exp(s_lat.log_probs), np.exp(t_lat.log_probs)
        total += collapsed_kl_distill(ps, pt, labels)
        de, dd = joint_backward(collapsed_kl_grad(ps, pt, labels), s_lat.logits)
        d_enc[b, : de.shape[0]] = de / B
        d_dec[b, : dd.shape[0]] = dd / B
    return DistillTerm(total / B, d_enc, d_dec)


@dataclass
class StepResult:
    """Loss terms and parameter gradients of one training step."""

    bundle: LossBundle
    grads: dict[str, ParamDict]
    ts_encoder_mse: float | None = None


def _add_scaled(base: FloatArray, extra: FloatArray | None, scale: float) -> FloatArray:
    if extra is None or scale == 0.0:
        return base
    return base + scale * extra


def colearn_step(
    params: RnntParams,
    batch: SequenceBatch,
    config: DistillConfig,
    dropout_rng: np.random.Generator | None = None,
) -> StepResult:
    """Co-learned teacher and student sharing one decoder forward.

    The shared decoder receives gradient from both transducer losses; the
    student encoder additionally receives lambda times the distillation
    gradient; the teacher encoder gradient does not depend on lambda.
    """
    decoder = params.decoder_for("student")
    dec, dec_cache = decoder_forward(decoder, batch.labels, batch.label_lengths, dropout_rng)
    s_enc, s_cache = encoder_forward(
        params.encoder("student"), batch.features, batch.feature_lengths
    )
    t_enc, t_cache = encoder_forward(
        params.encoder("teacher"), batch.features, batch.feature_lengths
    )
    _check_frame_rates(s_enc, t_enc)
    s_joint = joint_loss(s_enc, dec, batch)
    t_joint = joint_loss(t_enc, dec, batch)

    if config.loss_type == "collapsed_kl":
        term = collapsed_kl_term(
            s_joint, t_joint.lattices, batch, s_enc.logits.shape, dec.logits.shape
        )
    else:
        term = encoder_l2_term(s_enc, t_enc, config)

    lam = config.lambda_
    grads = {
        "student_encoder": encoder_backward(
            params.encoder("student"), s_cache, _add_scaled(s_joint.d_enc, term.d_student_enc, lam)
        ),
        "teacher_encoder": encoder_backward(params.encoder("teacher"), t_cache, t_joint.d_enc),
        params.decoder_name("student"): decoder_backward(
            decoder, dec_cache, _add_scaled(s_joint.d_dec + t_joint.d_dec, term.d_student_dec, lam)
        ),
    }
    return StepResult(
        bundle=total_loss(s_joint.loss, t_joint.loss, term.loss, config),
        grads=grads,
        ts_encoder_mse=teacher_student_mse(s_enc, t_enc),
    )


def static_teacher_step(
    student_params: RnntParams,
    frozen_teacher: RnntParams,
    batch: SequenceBatch,
    config: DistillConfig,
    dropout_rng: np.random.Generator | None = None,
) -> StepResult:
    """Student update against a pre-trained teacher that is only read.

    Only ``student_encoder`` and ``decoder`` gradients are returned.
    """
    s_enc_params = student_params.encoder("student")
    decoder = student_params.decoder_for("student")
    s_enc, s_cache = encoder_forward(s_enc_params, batch.features, batch.feature_lengths)
    dec, dec_cache = decoder_forward(decoder, batch.labels, batch.label_lengths, dropout_rng)
    s_joint = joint_loss(s_enc, dec, batch)
    t_enc, _ = encoder_forward(
        frozen_teacher.encoder("teacher"), batch.features, batch.feature_lengths
    )
    _check_frame_rates(s_enc, t_enc)

    if config.loss_type == "collapsed_kl":
        t_dec, _ = decoder_forward(
            frozen_teacher.decoder_for("teacher"), batch.labels, batch.label_lengths
        )
        term = collapsed_kl_term(
            s_joint, _teacher_lattices(t_enc, t_dec), batch, s_enc.logits.shape, dec.logits.shape
        )
    else:
        term = encoder_l2_term(s_enc, t_enc, config)

    lam = config.lambda_
    grads = {
        "student_encoder": encoder_backward(
            s_enc_params, s_cache, _add_scaled(s_joint.d_enc, term.d_student_enc, lam)
        ),
        student_params.decoder_name("student"): decoder_backward(
            decoder, dec_cache, _add_scaled(s_joint.d_dec, term.d_student_dec, lam)
        ),
    }
    return StepResult(
        bundle=total_loss(s_joint.loss, 0.0, term.loss, config, teacher_frozen=True),
        grads=grads,
        ts_encoder_mse=teacher_student_mse(s_enc, t_enc),
    )


def tandem_step(
    params: RnntParams,
    batch: SequenceBatch,
    config: DistillConfig,
    dropout_rng: np.random.Generator | None = None,
) -> StepResult:
    """Teacher and student trained side by side, each with its own decoder.

    No distillation term; the encoder-logit error is still measured.
    """
    if params.decoder_name("student") == params.decoder_name("teacher"):
        raise ValidationError("tandem training needs a separate teacher decoder")
    results: dict[str, tuple[EncoderOutput, JointResult]] = {}
    grads: dict[str, ParamDict] = {}
    for choice in ("student", "teacher"):
        enc_params = params.encoder(choice)
        dec_params = params.decoder_for(choice)
        enc, enc_cache = encoder_forward(enc_params, batch.features, batch.feature_lengths)
        dec, dec_cache = decoder_forward(
            dec_params, batch.labels, batch.label_lengths, dropout_rng
        )
        joint = joint_loss(enc, dec, batch)
        grads[params.encoder_name(choice)] = encoder_backward(enc_params, enc_cache, joint.d_enc)
        grads[params.decoder_name(choice)] = decoder_backward(dec_params, dec_cache, joint.d_dec)
        results[choice] = (enc, joint)
    s_enc, s_joint = results["student"]
    t_enc, t_joint = results["teacher"]
    return StepResult(
        bundle=total_loss(s_joint.loss, t_joint.loss, 0.0, config),
        grads=grads,
        ts_encoder_mse=teacher_student_mse(s_enc, t_enc),
    )


def baseline_step(
    params: RnntParams,
    batch: SequenceBatch,
    encoder_choice: str = "student",
    dropout_rng: np.random.Generator | None = None,
) -> StepResult:
    """Single transducer trained on its own loss."""
    enc_params = params.encoder(encoder_choice)
    dec_params = params.decoder_for(encoder_choice)
    enc, enc_cache = encoder_forward(enc_params, batch.features, batch.feature_lengths)
    dec, dec_cache = decoder_forward(dec_params, batch.labels, batch.label_lengths, dropout_rng)
    joint = joint_loss(enc, dec, batch)
    grads = {
        params.encoder_name(encoder_choice): encoder_backward(enc_params, enc_cache, joint.d_enc),
        params.decoder_name(encoder_choice): decoder_backward(dec_params, dec_cache, joint.d_dec),
    }
    loss = joint.loss
    if encoder_choice == "teacher":
        bundle = LossBundle(rnnt_student=0.0, rnnt_teacher=loss, total=loss)
    else:
        bundle = LossBundle(rnnt_student=loss, total=loss)
    return StepResult(bundle=bundle, grads=grads)
