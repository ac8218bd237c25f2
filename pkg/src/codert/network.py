"""Transducer network: LSTM encoder, prediction network and additive tanh joint.

Every component has an explicit forward pass that returns a cache and a
backward pass that consumes it. Batched sequences are processed with length
masks: at padded steps the recurrent state is frozen and the output is zero,
so a padded utterance produces exactly what it would produce alone.

Parameters are stored as float32 and promoted to float64 for computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np
import numpy.typing as npt
from scipy import special

from codert.config import DecoderConfig, EncoderConfig
from codert.exceptions import ShapeError, ValidationError
from codert.lattice import JointLattice, compute_lattice
from codert.models import SequenceBatch
from codert.numerics import FloatArray, IntArray

ParamDict = dict[str, npt.NDArray[np.floating[Any]]]

ENCODER_GROUPS = {"student": "student_encoder", "teacher": "teacher_encoder"}
SHARED_DECODER = "decoder"
TEACHER_DECODER = "teacher_decoder"


class LstmWeights(NamedTuple):
    """Gate-stacked LSTM weights in (input, forget, candidate, output) order."""

    w_x: FloatArray  # [4H, D]
    w_h: FloatArray  # [4H, H]
    b: FloatArray  # [4H]


@dataclass
class LstmCellCache:
    """Activations of one LSTM step, kept for the backward pass."""

    x: FloatArray
    h_prev: FloatArray
    c_prev: FloatArray
    i: FloatArray
    f: FloatArray
    g: FloatArray
    o: FloatArray
    tanh_c: FloatArray


def _lstm_step(
    z: FloatArray, x: FloatArray, h_prev: FloatArray, c_prev: FloatArray
) -> tuple[FloatArray, FloatArray, LstmCellCache]:
    H = c_prev.shape[-1]
    i = special.expit(z[..., :H])
    f = special.expit(z[..., H : 2 * H])
    g = np.tanh(z[..., 2 * H : 3 * H])
    o = special.expit(z[..., 3 * H :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LstmCellCache(x, h_prev, c_prev, i, f, g, o, tanh_c)


def _gate_grads(
    dh: FloatArray, dc: FloatArray, cache: LstmCellCache
) -> tuple[FloatArray, FloatArray]:
    """Gradient w.r.t. the stacked pre-activations and the previous cell state."""
    do = dh * cache.tanh_c
    dc_total = dc + dh * cache.o * (1.0 - cache.tanh_c**2)
    di = dc_total * cache.g
    df = dc_total * cache.c_prev
    dg = dc_total * cache.i
    dz = np.concatenate(
        [
            di * cache.i * (1.0 - cache.i),
            df * cache.f * (1.0 - cache.f),
            dg * (1.0 - cache.g**2),
            do * cache.o * (1.0 - cache.o),
        ],
        axis=-1,
    )
    return dz, dc_total * cache.f


def _check_lstm_dims(
    x: FloatArray, h_prev: FloatArray, c_prev: FloatArray, w: LstmWeights
) -> None:
    four_h, d_in = w.w_x.shape
    hidden = four_h // 4
    if four_h != 4 * hidden or w.w_h.shape != (four_h, hidden) or w.b.shape != (four_h,):
        raise ShapeError("inconsistent LSTM weight shapes")
    if x.shape[-1] != d_in:
        raise ShapeError(f"LSTM input has {x.shape[-1]} features, weights expect {d_in}")
    if h_prev.shape[-1] != hidden or c_prev.shape[-1] != hidden:
        raise ShapeError(f"LSTM state must have {hidden} units")


def lstm_cell_forward(
    x: npt.ArrayLike, h_prev: npt.ArrayLike, c_prev: npt.ArrayLike, weights: LstmWeights
) -> tuple[FloatArray, FloatArray, LstmCellCache]:
    """One LSTM step on a vector or a batch of row vectors.

    Returns:
        ``(h, c, cache)``.

    Raises:
        ShapeError: On any dimension mismatch.
    """
    x64 = np.asarray(x, dtype=np.float64)
    h64 = np.asarray(h_prev, dtype=np.float64)
    c64 = np.asarray(c_prev, dtype=np.float64)
    _check_lstm_dims(x64, h64, c64, weights)
    z = x64 @ weights.w_x.T + h64 @ weights.w_h.T + weights.b
    return _lstm_step(z, x64, h64, c64)


def lstm_cell_backward(
    dh: FloatArray, dc: FloatArray, cache: LstmCellCache, weights: LstmWeights
) -> tuple[FloatArray, FloatArray, FloatArray, LstmWeights]:
    """Backward of :func:`lstm_cell_forward`.

    Returns:
        ``(dx, dh_prev, dc_prev, weight_grads)``.
    """
    dz, dc_prev = _gate_grads(dh, dc, cache)
    grads = LstmWeights(
        w_x=np.einsum("...i,...j->ij", dz, cache.x),
        w_h=np.einsum("...i,...j->ij", dz, cache.h_prev),
        b=dz.reshape(-1, dz.shape[-1]).sum(axis=0),
    )
    return dz @ weights.w_x, dz @ weights.w_h, dc_prev, grads


@dataclass
class LstmLayerCache:
    inputs: FloatArray  # [B, T, D]
    mask: FloatArray  # [B, T, 1]
    steps: list[LstmCellCache]


def length_mask(lengths: IntArray, steps: int) -> FloatArray:
    """[B, steps, 1] float mask, 1 inside each sequence."""
    valid = np.arange(steps)[None, :] < np.asarray(lengths)[:, None]
    return valid.astype(np.float64)[..., None]


def lstm_layer_forward(
    inputs: FloatArray, lengths: IntArray, weights: LstmWeights
) -> tuple[FloatArray, LstmLayerCache]:
    """Run one LSTM layer over a padded batch [B, T, D] -> [B, T, H]."""
    B, T, _ = inputs.shape
    H = weights.w_h.shape[1]
    _check_lstm_dims(inputs, np.zeros(H), np.zeros(H), weights)
    mask = length_mask(lengths, T)
    zx = inputs @ weights.w_x.T + weights.b
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    outputs = np.zeros((B, T, H))
    steps: list[LstmCellCache] = []
    for t in range(T):
        z = zx[:, t] + h @ weights.w_h.T
        h_new, c_new, step = _lstm_step(z, inputs[:, t], h, c)
        steps.append(step)
        m = mask[:, t]
        outputs[:, t] = m * h_new
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    return outputs, LstmLayerCache(inputs, mask, steps)


def lstm_layer_backward(
    d_outputs: FloatArray, cache: LstmLayerCache, weights: LstmWeights
) -> tuple[FloatArray, LstmWeights]:
    """Backward of :func:`lstm_layer_forward` (backpropagation through time)."""
    B, T, D = cache.inputs.shape
    H = weights.w_h.shape[1]
    dZ = np.zeros((B, T, 4 * H))
    dw_h = np.zeros_like(weights.w_h)
    dh_state = np.zeros((B, H))
    dc_state = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        m = cache.mask[:, t]
        step = cache.steps[t]
        dz, dc_prev = _gate_grads(m * (d_outputs[:, t] + dh_state), m * dc_state, step)
        dZ[:, t] = dz
        dw_h += dz.T @ step.h_prev
        dh_state = dz @ weights.w_h + (1.0 - m) * dh_state
        dc_state = dc_prev + (1.0 - m) * dc_state
    grads = LstmWeights(
        w_x=dZ.reshape(-1, 4 * H).T @ cache.inputs.reshape(-1, D),
        w_h=dw_h,
        b=dZ.sum(axis=(0, 1)),
    )
    return dZ @ weights.w_x, grads


def time_reduce(frames: npt.ArrayLike, factor: int = 2) -> FloatArray:
    """Concatenate groups of ``factor`` consecutive frames along the feature axis.

    Works on [T, d] or [B, T, d]; a trailing partial group is completed with
    zero frames, so T frames become ceil(T / factor).
    """
    x = np.asarray(frames, dtype=np.float64)
    T, d = x.shape[-2], x.shape[-1]
    reduced = -(-T // factor)
    pad = reduced * factor - T
    if pad:
        widths = [(0, 0)] * (x.ndim - 2) + [(0, pad), (0, 0)]
        x = np.pad(x, widths)
    return x.reshape(*x.shape[:-2], reduced, factor * d)


def time_reduce_backward(d_reduced: FloatArray, num_frames: int, factor: int = 2) -> FloatArray:
    d = d_reduced.shape[-1] // factor
    expanded = d_reduced.reshape(*d_reduced.shape[:-2], d_reduced.shape[-2] * factor, d)
    return expanded[..., :num_frames, :]


def reduced_lengths(lengths: npt.ArrayLike, factor: int) -> IntArray:
    arr = np.asarray(lengths, dtype=np.int64)
    return (arr + factor - 1) // factor


@dataclass
class ParamSet:
    """Named tensors of one encoder or decoder together with its config."""

    config: EncoderConfig | DecoderConfig
    tensors: ParamDict

    def lstm(self, layer: int) -> LstmWeights:
        return LstmWeights(
            *(np.asarray(self.tensors[f"lstm{layer}.{k}"], dtype=np.float64)
              for k in ("w_x", "w_h", "b"))
        )

    def get(self, name: str) -> FloatArray:
        return np.asarray(self.tensors[name], dtype=np.float64)

    def count(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())

    def astype(self, dtype: npt.DTypeLike) -> ParamSet:
        return ParamSet(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> ParamSet:
        return self.astype(next(iter(self.tensors.values())).dtype)


def _encoder_layer_input_dim(cfg: EncoderConfig, layer: int) -> int:
    if layer == 0:
        return cfg.input_dim
    if cfg.time_reduction_after_layer == layer:
        return cfg.hidden_units * cfg.time_reduction_factor
    return cfg.hidden_units


def param_shapes(config: EncoderConfig | DecoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    H = config.hidden_units
    shapes: list[tuple[str, tuple[int, ...]]] = []
    if isinstance(config, DecoderConfig):
        shapes.append(("embed", (config.output_dim - 1, config.embed_dim)))
    for layer in range(config.num_layers):
        if isinstance(config, EncoderConfig):
            d_in = _encoder_layer_input_dim(config, layer)
        else:
            d_in = config.embed_dim if layer == 0 else H
        shapes += [
            (f"lstm{layer}.w_x", (4 * H, d_in)),
            (f"lstm{layer}.w_h", (4 * H, H)),
            (f"lstm{layer}.b", (4 * H,)),
        ]
    shapes += [("proj.w", (config.output_dim, H)), ("proj.b", (config.output_dim,))]
    return shapes


def init_params(config: EncoderConfig | DecoderConfig, seed: int) -> ParamSet:
    """Initialize one encoder or decoder deterministically from ``seed``.

    Matrices draw uniform(-a, a) with a = 1/sqrt(fan_in); biases are zero
    except the LSTM forget-gate slice, which is 1.0.
    """
    rng = np.random.default_rng(seed)
    tensors: ParamDict = {}
    for name, shape in param_shapes(config):
        if len(shape) == 1:
            bias = np.zeros(shape, dtype=np.float32)
            if name.startswith("lstm"):
                H = shape[0] // 4
                bias[H : 2 * H] = 1.0
            tensors[name] = bias
        else:
            bound = 1.0 / np.sqrt(shape[1])
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return ParamSet(config, tensors)


def zero_params(config: EncoderConfig | DecoderConfig) -> ParamSet:
    return ParamSet(config, {n: np.zeros(s, dtype=np.float32) for n, s in param_shapes(config)})


@dataclass
class EncoderOutput:
    """Encoder logits for a batch; rows past ``reduced_lengths`` are zero."""

    logits: FloatArray  # [B, T', V+1]
    reduced_lengths: IntArray

    def utterance(self, b: int) -> FloatArray:
        return self.logits[b, : self.reduced_lengths[b]]


@dataclass
class EncoderCache:
    layers: list[LstmLayerCache]
    frames_before_reduction: int | None
    top: FloatArray
    mask: FloatArray


def _as_batch(frames: npt.ArrayLike, lengths: npt.ArrayLike | None) -> tuple[FloatArray, IntArray]:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"frames must be [T, d] or [B, T, d], got {x.shape}")
    lens = (
        np.full(x.shape[0], x.shape[1], dtype=np.int64)
        if lengths is None
        else np.asarray(lengths, dtype=np.int64)
    )
    return x, lens


def encoder_forward(
    params: ParamSet, frames: npt.ArrayLike, lengths: npt.ArrayLike | None = None
) -> tuple[EncoderOutput, EncoderCache]:
    """Stacked LSTM with optional time reduction, projected to V+1 logits.

    Args:
        params: Encoder parameter set.
        frames: [T, d] for one utterance or zero-padded [B, T, d].
        lengths: True frame counts; all full when omitted.

    Raises:
        ShapeError: If the feature dimension does not match the config.
    """
    cfg = params.config
    if not isinstance(cfg, EncoderConfig):
        raise ValidationError("encoder_forward needs an encoder parameter set")
    x, lens = _as_batch(frames, lengths)
    if x.shape[-1] != cfg.input_dim:
        raise ShapeError(f"frames have {x.shape[-1]} features, encoder expects {cfg.input_dim}")
    layers: list[LstmLayerCache] = []
    before: int | None = None
    for layer in range(cfg.num_layers):
        x, cache = lstm_layer_forward(x, lens, params.lstm(layer))
        layers.append(cache)
        if cfg.time_reduction_after_layer == layer + 1:
            before = x.shape[1]
            x = time_reduce(x, cfg.time_reduction_factor)
            lens = reduced_lengths(lens, cfg.time_reduction_factor)
    mask = length_mask(lens, x.shape[1])
    logits = (x @ params.get("proj.w").T + params.get("proj.b")) * mask
    return EncoderOutput(logits, lens), EncoderCache(layers, before, x, mask)


def encoder_backward(params: ParamSet, cache: EncoderCache, d_logits: FloatArray) -> ParamDict:
    """Parameter gradients of an encoder given dL/dlogits."""
    cfg = params.config
    assert isinstance(cfg, EncoderConfig)
    d_logits = d_logits * cache.mask
    grads: ParamDict = {
        "proj.w": np.einsum("btk,bth->kh", d_logits, cache.top),
        "proj.b": d_logits.sum(axis=(0, 1)),
    }
    dx = d_logits @ params.get("proj.w")
    for layer in range(cfg.num_layers - 1, -1, -1):
        if cfg.time_reduction_after_layer == layer + 1:
            assert cache.frames_before_reduction is not None
            dx = time_reduce_backward(dx, cache.frames_before_reduction, cfg.time_reduction_factor)
        dx, lg = lstm_layer_backward(dx, cache.layers[layer], params.lstm(layer))
        grads[f"lstm{layer}.w_x"], grads[f"lstm{layer}.w_h"], grads[f"lstm{layer}.b"] = lg
    return grads


@dataclass
class DecoderOutput:
    """Prediction-network logits; row 0 is the start state."""

    logits: FloatArray  # [B, U_max+1, V+1]
    lengths: IntArray  # U+1 per utterance

    def utterance(self, b: int) -> FloatArray:
        return self.logits[b, : self.lengths[b]]


@dataclass
class DecoderCache:
    labels: IntArray
    label_valid: npt.NDArray[np.bool_]
    layers: list[LstmLayerCache]
    dropout_keep: FloatArray | None
    top: FloatArray
    mask: FloatArray


def decoder_forward(
    params: ParamSet,
    labels: npt.ArrayLike,
    label_lengths: npt.ArrayLike | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[DecoderOutput, DecoderCache]:
    """Teacher-forced prediction network.

    Row 0 sees a zero embedding; row u sees the embedding of label u-1.
    Dropout (inverted) is applied to the last LSTM output only when a
    generator is given.

    Raises:
        ValidationError: If a token is outside [0, V).
    """
    cfg = params.config
    if not isinstance(cfg, DecoderConfig):
        raise ValidationError("decoder_forward needs a decoder parameter set")
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim == 1:
        y = y[None]
    lens = (
        np.full(y.shape[0], y.shape[1], dtype=np.int64)
        if label_lengths is None
        else np.asarray(label_lengths, dtype=np.int64)
    )
    valid = np.arange(y.shape[1])[None, :] < lens[:, None]
    vocab = cfg.output_dim - 1
    if np.any((y[valid] < 0) | (y[valid] >= vocab)):
        raise ValidationError(f"tokens must lie in [0, {vocab})")
    embed = params.get("embed")
    x = np.zeros((y.shape[0], y.shape[1] + 1, cfg.embed_dim))
    x[:, 1:][valid] = embed[y[valid]]
    steps = lens + 1
    layers: list[LstmLayerCache] = []
    for layer in range(cfg.num_layers):
        x, cache = lstm_layer_forward(x, steps, params.lstm(layer))
        layers.append(cache)
    keep: FloatArray | None = None
    if dropout_rng is not None and cfg.dropout > 0.0:
        keep = (dropout_rng.random(x.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
        x = x * keep
    mask = length_mask(steps, x.shape[1])
    logits = (x @ params.get("proj.w").T + params.get("proj.b")) * mask
    return DecoderOutput(logits, steps), DecoderCache(y, valid, layers, keep, x, mask)


def decoder_backward(params: ParamSet, cache: DecoderCache, d_logits: FloatArray) -> ParamDict:
    """Parameter gradients of the prediction network given dL/dlogits."""
    cfg = params.config
    d_logits = d_logits * cache.mask
    grads: ParamDict = {
        "proj.w": np.einsum("buk,buh->kh", d_logits, cache.top),
        "proj.b": d_logits.sum(axis=(0, 1)),
    }
    dx = d_logits @ params.get("proj.w")
    if cache.dropout_keep is not None:
        dx = dx * cache.dropout_keep
    for layer in range(cfg.num_layers - 1, -1, -1):
        dx, lg = lstm_layer_backward(dx, cache.layers[layer], params.lstm(layer))
        grads[f"lstm{layer}.w_x"], grads[f"lstm{layer}.w_h"], grads[f"lstm{layer}.b"] = lg
    d_embed = np.zeros_like(params.get("embed"))
    np.add.at(d_embed, cache.labels[cache.label_valid], dx[:, 1:][cache.label_valid])
    grads["embed"] = d_embed
    return grads


DecoderState = tuple[tuple[FloatArray, FloatArray], ...]


def decoder_step(
    params: ParamSet, token: int | None, state: DecoderState | None = None
) -> tuple[FloatArray, DecoderState]:
    """Advance the prediction network by one label (``None`` = start symbol).

    Returns:
        ``(logits [V+1], new_state)``.
    """
    cfg = params.config
    assert isinstance(cfg, DecoderConfig)
    H = cfg.hidden_units
    if state is None:
        state = tuple((np.zeros(H), np.zeros(H)) for _ in range(cfg.num_layers))
    if token is None:
        x = np.zeros(cfg.embed_dim)
    else:
        if not 0 <= token < cfg.output_dim - 1:
            raise ValidationError(f"token {token} outside [0, {cfg.output_dim - 1})")
        x = params.get("embed")[token]
    new_state = []
    for layer, (h_prev, c_prev) in enumerate(state):
        x, c, _ = lstm_cell_forward(x, h_prev, c_prev, params.lstm(layer))
        new_state.append((x, c))
    logits = params.get("proj.w") @ x + params.get("proj.b")
    return logits, tuple(new_state)


def joint_forward(enc: npt.ArrayLike, dec: npt.ArrayLike) -> FloatArray:
    """out[..., t, u, k] = tanh(enc[..., t, k] + dec[..., u, k])."""
    e = np.asarray(enc, dtype=np.float64)
    d = np.asarray(dec, dtype=np.float64)
    if e.shape[-1] != d.shape[-1]:
        raise ShapeError(f"joint inputs disagree on V+1: {e.shape[-1]} vs {d.shape[-1]}")
    return np.tanh(e[..., :, None, :] + d[..., None, :, :])


def joint_backward(d_out: FloatArray, out: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Gradients w.r.t. the encoder and decoder logits of :func:`joint_forward`."""
    d_pre = d_out * (1.0 - out**2)
    return d_pre.sum(axis=-2), d_pre.sum(axis=-3)


@dataclass
class JointResult:
    """Per-utterance lattices plus gradients of the batch-mean loss."""

    lattices: list[JointLattice]
    losses: FloatArray
    d_enc: FloatArray
    d_dec: FloatArray

    @property
    def loss(self) -> float:
        return float(self.losses.mean())


def joint_loss(enc: EncoderOutput, dec: DecoderOutput, batch: SequenceBatch) -> JointResult:
    """Transducer loss of a batch, averaged over utterances.

    Each utterance's lattice is built from its true lengths only.
    """
    B = batch.size
    lattices: list[JointLattice] = []
    losses = np.zeros(B)
    d_enc = np.zeros_like(enc.logits)
    d_dec = np.zeros_like(dec.logits)
    for b in range(B):
        t_len, u_len = int(enc.reduced_lengths[b]), int(dec.lengths[b])
        out = joint_forward(enc.logits[b, :t_len], dec.logits[b, :u_len])
        lattice, losses[b] = compute_lattice(out, batch.label_sequence(b))
        assert lattice.grad_logits is not None
        de, dd = joint_backward(lattice.grad_logits, out)
        d_enc[b, :t_len] = de / B
        d_dec[b, :u_len] = dd / B
        lattices.append(lattice)
    return JointResult(lattices, losses, d_enc, d_dec)


@dataclass
class RnntParams:
    """All parameter groups of a run, keyed by group name.

    Groups: ``student_encoder``, ``teacher_encoder``, ``decoder`` (shared)
    and, for runs where the teacher owns its prediction network,
    ``teacher_decoder``.
    """

    groups: dict[str, ParamSet] = field(default_factory=dict)

    def encoder(self, choice: str) -> ParamSet:
        return self.groups[self.encoder_name(choice)]

    def encoder_name(self, choice: str) -> str:
        name = ENCODER_GROUPS.get(choice)
        if name is None or name not in self.groups:
            raise ValidationError(f"no {choice!r} encoder in this parameter set")
        return name

    def decoder_name(self, choice: str) -> str:
        if choice == "teacher" and TEACHER_DECODER in self.groups:
            return TEACHER_DECODER
        if SHARED_DECODER not in self.groups:
            raise ValidationError("parameter set has no decoder")
        return SHARED_DECODER

    def decoder_for(self, choice: str) -> ParamSet:
        return self.groups[self.decoder_name(choice)]

    def flat(self) -> ParamDict:
        """All tensors under ``group/name`` keys."""
        return {f"{g}/{k}": v for g, ps in self.groups.items() for k, v in ps.tensors.items()}

    def copy(self) -> RnntParams:
        return RnntParams({g: ps.copy() for g, ps in self.groups.items()})

    def astype(self, dtype: npt.DTypeLike) -> RnntParams:
        return RnntParams({g: ps.astype(dtype) for g, ps in self.groups.items()})


def count_params(params: ParamSet | RnntParams) -> int:
    """Number of scalar parameters."""
    if isinstance(params, RnntParams):
        return sum(ps.count() for ps in params.groups.values())
    return params.count()


@dataclass
class ModelForward:
    encoder: EncoderOutput
    encoder_cache: EncoderCache
    decoder: DecoderOutput
    decoder_cache: DecoderCache
    joint: JointResult

    @property
    def loss(self) -> float:
        return self.joint.loss

    @property
    def lattices(self) -> list[JointLattice]:
        return self.joint.lattices


def model_forward(
    params: RnntParams,
    batch: SequenceBatch,
    encoder_choice: str = "student",
    dropout_rng: np.random.Generator | None = None,
) -> ModelForward:
    """Full forward of one encoder + its decoder over a batch."""
    enc_params = params.encoder(encoder_choice)
    enc, enc_cache = encoder_forward(enc_params, batch.features, batch.feature_lengths)
    dec, dec_cache = decoder_forward(
        params.decoder_for(encoder_choice), batch.labels, batch.label_lengths, dropout_rng
    )
    return ModelForward(enc, enc_cache, dec, dec_cache, joint_loss(enc, dec, batch))


def model_backward(
    params: RnntParams,
    fwd: ModelForward,
    encoder_choice: str = "student",
    d_enc_extra: FloatArray | None = None,
) -> dict[str, ParamDict]:
    """Gradients of the batch-mean transducer loss (plus an optional extra
    encoder-logit gradient) for the encoder and decoder groups used."""
    d_enc = fwd.joint.d_enc if d_enc_extra is None else fwd.joint.d_enc + d_enc_extra
    return {
        params.encoder_name(encoder_choice): encoder_backward(
            params.encoder(encoder_choice), fwd.encoder_cache, d_enc
        ),
        params.decoder_name(encoder_choice): decoder_backward(
            params.decoder_for(encoder_choice), fwd.decoder_cache, fwd.joint.d_dec
        ),
    }
