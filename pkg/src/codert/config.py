"""Configuration loading and validation."""

from __future__ import annotations

import os
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Literal

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from codert.exceptions import ConfigurationError

DEFAULT_VOCAB_SIZE = 32
DEFAULT_FEATURE_DIM = 8


class TrainingMode(str, Enum):
    """Training topologies."""

    BASELINE = "baseline"
    COLEARN = "colearn_shared_decoder"
    STATIC = "static_teacher_separate"
    SEPARATE = "colearn_no_distill"


class EncoderConfig(BaseModel):
    """Stacked-LSTM encoder with optional time reduction."""

    num_layers: int = Field(default=2, ge=1)
    hidden_units: int = Field(default=32, ge=1)
    input_dim: int = Field(default=DEFAULT_FEATURE_DIM, ge=1)
    time_reduction_after_layer: int | None = 1  # 1-based: reduce after this many layers
    time_reduction_factor: int = Field(default=2, ge=1)
    output_dim: int = Field(default=DEFAULT_VOCAB_SIZE + 1, ge=2)

    @model_validator(mode="after")
    def _check_reduction(self) -> Self:
        after = self.time_reduction_after_layer
        if after is not None and not 1 <= after < self.num_layers:
            raise ValueError(
                f"time_reduction_after_layer={after} must be in [1, {self.num_layers - 1}]"
            )
        return self

    @property
    def reduction(self) -> int:
        """Overall frame-rate reduction factor."""
        return 1 if self.time_reduction_after_layer is None else self.time_reduction_factor


class DecoderConfig(BaseModel):
    """Embedding + LSTM prediction network."""

    embed_dim: int = Field(default=32, ge=1)
    num_layers: int = Field(default=1, ge=1)
    hidden_units: int = Field(default=64, ge=1)
    output_dim: int = Field(default=DEFAULT_VOCAB_SIZE + 1, ge=2)
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)


class DistillConfig(BaseModel):
    """Distillation term of the total loss."""

    model_config = ConfigDict(populate_by_name=True)

    lambda_: float = Field(default=1.0, ge=0.0, alias="lambda")
    top_k: int | None = Field(default=None, ge=1)
    top_k_source: Literal["teacher", "student", "union"] = "teacher"
    loss_type: Literal["encoder_l2", "collapsed_kl"] = "encoder_l2"


class LrSchedule(BaseModel):
    """Linear warm-up, constant hold, exponential decay (defaults: full-scale values)."""

    warmup_start: float = Field(default=1e-7, gt=0.0)
    peak: float = Field(default=5e-4, gt=0.0)
    warmup_steps: int = Field(default=3000, ge=1)
    hold_steps: int = Field(default=35000, ge=1)
    decay_end_step: int = Field(default=75000, ge=1)
    final_lr: float = Field(default=1e-5, gt=0.0)

    @model_validator(mode="after")
    def _check_order(self) -> Self:
        if not self.warmup_start < self.peak:
            raise ValueError("warmup_start must be below peak")
        if not self.final_lr < self.peak:
            raise ValueError("final_lr must be below peak")
        if not self.warmup_steps + self.hold_steps < self.decay_end_step:
            raise ValueError("decay_end_step must come after warm-up and hold")
        return self

    @property
    def hold_end(self) -> int:
        return self.warmup_steps + self.hold_steps


class OptimizerConfig(BaseModel):
    """Adam with global-norm clipping."""

    name: Literal["adam"] = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = Field(default=5.0, gt=0.0)


class SeedsConfig(BaseModel):
    """The four named seeds every random draw funnels through."""

    data: int = 0
    init_student: int = 1
    init_teacher: int = 2
    shuffle: int = 3

    def with_run_seed(self, seed: int) -> SeedsConfig:
        """Derive init/shuffle seeds from one run seed; the data seed is kept."""
        return SeedsConfig(
            data=self.data, init_student=seed, init_teacher=seed + 1, shuffle=seed + 2
        )


class ConfusionPair(BaseModel):
    """Two tokens whose acoustic prototypes overlap."""

    a: int = Field(ge=0)
    b: int = Field(ge=0)
    overlap: float = Field(ge=0.0, le=1.0)


class TaskSpec(BaseModel):
    """Synthetic "toy acoustic" task definition."""

    vocab_size: int = Field(default=DEFAULT_VOCAB_SIZE, ge=2)
    feature_dim: int = Field(default=DEFAULT_FEATURE_DIM, ge=1)
    duration_range: tuple[int, int] = (2, 5)
    noise_sigma: float = Field(default=0.3, ge=0.0)
    confusion_pairs: list[ConfusionPair] = Field(default_factory=list)
    utterance_len_range: tuple[int, int] = (3, 8)
    token_zipf: float = Field(default=0.0, ge=0.0)
    tail_fraction: float = Field(default=0.25, gt=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> Self:
        lo, hi = self.duration_range
        if not 1 <= lo <= hi:
            raise ValueError(f"duration_range {self.duration_range} must satisfy 1 <= min <= max")
        lo, hi = self.utterance_len_range
        if not 1 <= lo <= hi:
            raise ValueError(
                f"utterance_len_range {self.utterance_len_range} must satisfy 1 <= min <= max"
            )
        for pair in self.confusion_pairs:
            if pair.a >= self.vocab_size or pair.b >= self.vocab_size or pair.a == pair.b:
                raise ValueError(f"confusion pair ({pair.a}, {pair.b}) invalid for vocab")
        return self


class DataConfig(BaseModel):
    """Corpus generation settings."""

    task: TaskSpec = Field(default_factory=TaskSpec)
    num_utterances: int = Field(default=2000, ge=0)
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    long_utterances: int = Field(default=100, ge=0)
    tail_utterances: int = Field(default=100, ge=0)


class RuntimeConfig(BaseModel):
    """Process-level knobs."""

    threads: int = Field(default=1, ge=1)
    log_every: int = Field(default=50, ge=1)


def _desk_teacher() -> EncoderConfig:
    return EncoderConfig(num_layers=3, hidden_units=64, time_reduction_after_layer=2)


def _desk_schedule() -> LrSchedule:
    return LrSchedule(
        warmup_start=1e-5,
        peak=3e-3,
        warmup_steps=100,
        hold_steps=1100,
        decay_end_step=2000,
        final_lr=3e-4,
    )


class TrainConfig(BaseModel):
    """Root configuration model for a training run."""

    model_config = ConfigDict(populate_by_name=True)

    mode: TrainingMode = TrainingMode.COLEARN
    baseline_model: Literal["student", "teacher"] = "student"
    student_encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    teacher_encoder: EncoderConfig = Field(default_factory=_desk_teacher)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    distill: DistillConfig = Field(default_factory=DistillConfig)
    lr_schedule: LrSchedule = Field(default_factory=_desk_schedule)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    seeds: SeedsConfig = Field(default_factory=SeedsConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
    batch_size: int = Field(default=16, ge=1)
    max_steps: int = Field(default=2000, ge=0)
    eval_every: int = Field(default=250, ge=1)
    eval_beam: int = Field(default=6, ge=1)
    eval_max_utterances: int | None = Field(default=200, ge=1)
    max_symbols_per_frame: int = Field(default=10, ge=1)
    data_dir: Path | None = None
    out_dir: Path = Path("runs/default")
    teacher_checkpoint: Path | None = None

    @model_validator(mode="after")
    def _check_consistency(self) -> Self:
        vocab_out = self.data.task.vocab_size + 1
        feature_dim = self.data.task.feature_dim
        for name, enc in (("student_encoder", self.student_encoder),
                          ("teacher_encoder", self.teacher_encoder)):
            if enc.output_dim != vocab_out:
                raise ValueError(f"{name}.output_dim must be vocab_size + 1 = {vocab_out}")
            if enc.input_dim != feature_dim:
                raise ValueError(f"{name}.input_dim must equal feature_dim = {feature_dim}")
        if self.decoder.output_dim != vocab_out:
            raise ValueError(f"decoder.output_dim must be vocab_size + 1 = {vocab_out}")
        if self.student_encoder.reduction != self.teacher_encoder.reduction:
            raise ValueError("teacher and student encoders must reduce time by the same factor")
        if self.distill.top_k is not None and self.distill.top_k > vocab_out:
            raise ValueError(f"distill.top_k must be in [1, {vocab_out}]")
        if self.mode == TrainingMode.STATIC and self.teacher_checkpoint is None:
            raise ValueError("static_teacher_separate mode requires teacher_checkpoint")
        return self

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / "metrics.jsonl"

    @property
    def vocab_size(self) -> int:
        return self.data.task.vocab_size

    @classmethod
    def librispeech_preset(cls, **overrides: Any) -> TrainConfig:
        """Second experimental setup: no time reduction, decoder dropout, beam 16."""
        base = cls().model_dump(by_alias=True)
        base["student_encoder"]["time_reduction_after_layer"] = None
        base["teacher_encoder"]["time_reduction_after_layer"] = None
        base["decoder"]["dropout"] = 0.3
        base["lr_schedule"].update(warmup_steps=35, hold_steps=700, decay_end_step=2000)
        base["eval_beam"] = 16
        return cls.model_validate(_deep_merge(base, overrides))


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Deep merge two dictionaries.

    Args:
        base: Base dictionary
        override: Override dictionary (takes precedence)

    Returns:
        Merged dictionary with override values taking precedence
    """
    result = base.copy()
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = value
    return result


def _read_document(path: Path) -> dict[str, Any]:
    """Read a YAML or JSON document (JSON parses as YAML)."""
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        with path.open() as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Invalid YAML/JSON in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must contain a mapping at the top level")
    return data


def load_config(
    config_path: Path | None = None, overrides: dict[str, Any] | None = None
) -> TrainConfig:
    """Load a training configuration with environment and flag overrides.

    Priority (highest to lowest):
    1. ``overrides`` (command-line flags)
    2. Environment variables (CODERT_THREADS, CODERT_MAX_STEPS, CODERT_LAMBDA)
    3. The config file
    4. Defaults

    Args:
        config_path: YAML/JSON config file. If None, defaults are used.
        overrides: Nested mapping merged over the file contents.

    Returns:
        Validated TrainConfig object.

    Raises:
        ConfigurationError: If the file is unreadable or the result is invalid.
    """
    data: dict[str, Any] = {}
    if config_path is not None:
        data = _read_document(config_path)

    data = _apply_env_overrides(data)
    if overrides:
        data = _deep_merge(data, overrides)

    try:
        return TrainConfig.model_validate(data)
    except Exception as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e


def load_data_config(path: Path, num_utterances: int | None = None) -> DataConfig:
    """Load a corpus-generation document.

    Accepts either a full ``DataConfig`` mapping or a bare ``TaskSpec`` mapping.

    Raises:
        ConfigurationError: If the file is unreadable or invalid.
    """
    data = _read_document(path)
    if "task" not in data and set(data) <= set(TaskSpec.model_fields):
        data = {"task": data}
    if num_utterances is not None:
        data["num_utterances"] = num_utterances
    try:
        return DataConfig.model_validate(data)
    except Exception as e:
        raise ConfigurationError(f"Invalid data spec in {path}: {e}") from e


def _apply_env_overrides(data: dict[str, Any]) -> dict[str, Any]:
    """Apply CODERT_* environment variables as overrides."""
    env_mappings: dict[str, tuple[tuple[str, ...], type]] = {
        "CODERT_THREADS": (("runtime", "threads"), int),
        "CODERT_MAX_STEPS": (("max_steps",), int),
        "CODERT_LAMBDA": (("distill", "lambda"), float),
    }

    result = dict(data)
    for env_var, (keys, cast) in env_mappings.items():
        if (value := os.environ.get(env_var)) is None:
            continue
        try:
            converted = cast(value)
        except ValueError as e:
            raise ConfigurationError(f"{env_var}={value!r} is not a valid {cast.__name__}") from e
        section = result
        for key in keys[:-1]:
            section[key] = dict(section.get(key) or {})
            section = section[key]
        section[keys[-1]] = converted

    return result
