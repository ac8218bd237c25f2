"""Domain models for codert."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, model_validator

from codert.exceptions import ShapeError, ValidationError
from codert.numerics import FloatArray, IntArray


class CorpusVariant(str, Enum):
    """Evaluation-set flavours produced by the corpus generator."""

    STANDARD = "standard"
    LONG = "long"
    TAIL = "tail"


@dataclass(frozen=True)
class Utterance:
    """One synthetic utterance: feature frames and its reference tokens."""

    frames: npt.NDArray[np.float32]  # [T, d]
    tokens: tuple[int, ...]
    alignment: tuple[int, ...] = ()  # generating token per frame, when known

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class Corpus:
    """An ordered collection of utterances sharing one feature dimension."""

    utterances: list[Utterance]
    feature_dim: int
    vocab_size: int

    def __len__(self) -> int:
        return len(self.utterances)

    def subset(self, indices: list[int] | IntArray) -> Corpus:
        return Corpus([self.utterances[int(i)] for i in indices], self.feature_dim, self.vocab_size)


@dataclass
class SequenceBatch:
    """Zero-padded minibatch with true lengths.

    ``labels`` is padded with zeros beyond ``label_lengths``; padded feature
    rows are zero.
    """

    features: FloatArray  # [B, T_max, d]
    feature_lengths: IntArray  # [B]
    labels: IntArray  # [B, U_max]
    label_lengths: IntArray  # [B]

    def __post_init__(self) -> None:
        if self.features.ndim != 3:
            raise ShapeError(f"features must be [B, T, d], got {self.features.shape}")
        batch = self.features.shape[0]
        if self.labels.ndim != 2 or self.labels.shape[0] != batch:
            raise ShapeError(f"labels must be [B, U_max] with B={batch}, got {self.labels.shape}")
        if self.feature_lengths.shape != (batch,) or self.label_lengths.shape != (batch,):
            raise ShapeError("length vectors must have one entry per utterance")
        if batch and (
            self.feature_lengths.max() > self.features.shape[1]
            or self.label_lengths.max(initial=0) > self.labels.shape[1]
        ):
            raise ShapeError("a true length exceeds the padded dimension")
        if batch and self.feature_lengths.min() < 1:
            raise ValidationError("every utterance needs at least one frame")

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    def label_sequence(self, b: int) -> IntArray:
        return self.labels[b, : self.label_lengths[b]]

    @classmethod
    def from_utterances(cls, utterances: list[Utterance]) -> SequenceBatch:
        """Pad a list of utterances to the batch maxima."""
        if not utterances:
            raise ValidationError("cannot batch an empty list of utterances")
        dim = utterances[0].frames.shape[1]
        t_max = max(u.num_frames for u in utterances)
        u_max = max(len(u.tokens) for u in utterances)
        features = np.zeros((len(utterances), t_max, dim), dtype=np.float64)
        labels = np.zeros((len(utterances), u_max), dtype=np.int64)
        for b, utt in enumerate(utterances):
            features[b, : utt.num_frames] = utt.frames
            labels[b, : len(utt.tokens)] = utt.tokens
        return cls(
            features=features,
            feature_lengths=np.array([u.num_frames for u in utterances], dtype=np.int64),
            labels=labels,
            label_lengths=np.array([len(u.tokens) for u in utterances], dtype=np.int64),
        )


class LossBundle(BaseModel):
    """The terms of the total loss for one step."""

    rnnt_student: float = Field(ge=0.0)
    rnnt_teacher: float = Field(default=0.0, ge=0.0)
    distill: float = Field(default=0.0, ge=0.0)
    total: float = Field(ge=0.0)


@dataclass
class Hypothesis:
    """A partial or final decoding hypothesis."""

    tokens: tuple[int, ...]
    log_prob: float
    decoder_state: Any = field(default=None, repr=False, compare=False)
    decoder_logits: FloatArray | None = field(default=None, repr=False, compare=False)


@dataclass
class Histogram:
    """Fixed-bin histogram of per-position entropies (nats)."""

    bin_edges: FloatArray
    counts: IntArray
    total: int
    mean: float

    def __post_init__(self) -> None:
        if len(self.counts) != len(self.bin_edges) - 1:
            raise ShapeError("histogram needs len(bin_edges) - 1 counts")
        if int(self.counts.sum()) != self.total:
            raise ValidationError("histogram counts do not add up to total")


class StepRecord(BaseModel):
    """One training step in the metrics log."""

    kind: str = "step"
    step: int
    lr: float
    loss_rnnt_s: float
    loss_rnnt_t: float
    loss_distill: float
    loss_total: float
    grad_norm_s: float
    grad_norm_t: float
    grad_norm_dec: float
    ts_encoder_mse: float | None = None


class EvalRecord(BaseModel):
    """A periodic evaluation entry in the metrics log."""

    kind: str = "eval"
    step: int
    split: str
    wer_student: float | None = None
    wer_teacher: float | None = None
    beam: int
    ts_encoder_mse: float | None = None

    @model_validator(mode="after")
    def _check_rates(self) -> EvalRecord:
        if any(w is not None and w < 0 for w in (self.wer_student, self.wer_teacher)):
            raise ValueError("WER cannot be negative")
        return self


class SuiteResult(BaseModel):
    """Outcome of one selfcheck oracle suite."""

    name: str
    passed: bool
    cases: int
    seconds: float
    worst_error: float = 0.0
    failing_case: dict[str, Any] | None = None
