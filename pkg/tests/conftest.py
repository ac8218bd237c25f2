"""Pytest fixtures for codert tests."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from codert.config import (
    DataConfig,
    DecoderConfig,
    EncoderConfig,
    LrSchedule,
    RuntimeConfig,
    TaskSpec,
    TrainConfig,
)
from codert.data_synth import generate_corpus
from codert.models import Corpus, SequenceBatch
from codert.network import RnntParams
from codert.selfcheck import toy_batch, toy_params

TOY_VOCAB = 4
TOY_DIM = 3


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    """Skip ``slow`` tests unless CODERT_RUN_SLOW=1."""
    if os.environ.get("CODERT_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; set CODERT_RUN_SLOW=1 to enable")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def toy_encoder_config() -> EncoderConfig:
    """2-layer/8-unit encoder with time reduction after the first layer."""
    return EncoderConfig(
        num_layers=2, hidden_units=8, input_dim=TOY_DIM, output_dim=TOY_VOCAB + 1,
        time_reduction_after_layer=1,
    )


@pytest.fixture
def toy_decoder_config() -> DecoderConfig:
    return DecoderConfig(embed_dim=4, num_layers=1, hidden_units=8, output_dim=TOY_VOCAB + 1)


@pytest.fixture
def params(rng: np.random.Generator) -> RnntParams:
    """float64 student, teacher and shared decoder over V+1 = 5 classes."""
    return toy_params(rng, classes=TOY_VOCAB + 1, input_dim=TOY_DIM)


@pytest.fixture
def separate_params(rng: np.random.Generator) -> RnntParams:
    """Like ``params`` but the teacher owns its decoder."""
    return toy_params(rng, classes=TOY_VOCAB + 1, input_dim=TOY_DIM, separate_teacher=True)


@pytest.fixture
def batch(rng: np.random.Generator) -> SequenceBatch:
    """Mixed-length batch of three utterances."""
    return toy_batch(rng, 3, vocab=TOY_VOCAB, input_dim=TOY_DIM, frames=(3, 8), labels=(1, 3))


@pytest.fixture
def tiny_task() -> TaskSpec:
    return TaskSpec(
        vocab_size=TOY_VOCAB,
        feature_dim=TOY_DIM,
        duration_range=(1, 3),
        utterance_len_range=(2, 4),
        noise_sigma=0.1,
        seed=7,
    )


@pytest.fixture
def tiny_corpus(tiny_task: TaskSpec) -> Corpus:
    return generate_corpus(tiny_task, 12)


@pytest.fixture
def tiny_train_config(tmp_path: Path, tiny_task: TaskSpec) -> TrainConfig:
    """A few-step training run on the tiny task, writing under ``tmp_path``."""
    classes = TOY_VOCAB + 1
    return TrainConfig(
        student_encoder=EncoderConfig(
            num_layers=2, hidden_units=6, input_dim=TOY_DIM, output_dim=classes,
            time_reduction_after_layer=1,
        ),
        teacher_encoder=EncoderConfig(
            num_layers=2, hidden_units=10, input_dim=TOY_DIM, output_dim=classes,
            time_reduction_after_layer=1,
        ),
        decoder=DecoderConfig(embed_dim=4, hidden_units=6, output_dim=classes),
        data=DataConfig(task=tiny_task, num_utterances=20, long_utterances=2, tail_utterances=2),
        lr_schedule=LrSchedule(
            warmup_start=1e-4, peak=1e-2, warmup_steps=2, hold_steps=3, decay_end_step=10,
            final_lr=1e-3,
        ),
        runtime=RuntimeConfig(log_every=1),
        batch_size=4,
        max_steps=4,
        eval_every=2,
        eval_beam=2,
        eval_max_utterances=4,
        out_dir=tmp_path / "run",
    )
