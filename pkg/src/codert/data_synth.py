"""Deterministic synthetic "toy acoustic" corpora.

Every token owns a prototype: a fixed sequence of ``max_duration`` feature
frames. An occurrence of the token lasting L frames resamples the prototype
to L frames; an utterance concatenates its tokens' occurrences and adds iid
Gaussian noise.

Random streams are derived from the task seed with ``numpy.random.SeedSequence``
and drawn with PCG64: stream 0 builds prototypes, stream (1, variant) samples
utterances, so every variant of a task shares its acoustics.
"""

from __future__ import annotations

import math

import numpy as np

from codert.config import DataConfig, TaskSpec
from codert.exceptions import ValidationError
from codert.logging import get_logger
from codert.models import Corpus, CorpusVariant, SequenceBatch, Utterance
from codert.numerics import FloatArray

logger = get_logger(__name__)

_PROTOTYPE_STREAM = 0
_UTTERANCE_STREAM = 1
_VARIANT_IDS = {CorpusVariant.STANDARD: 0, CorpusVariant.LONG: 1, CorpusVariant.TAIL: 2}


def _generator(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))


def make_prototypes(spec: TaskSpec) -> FloatArray:
    """Prototype frames [V, max_duration, d]; confusion pairs blend toward ``a``."""
    rng = _generator(spec.seed, _PROTOTYPE_STREAM)
    max_dur = spec.duration_range[1]
    protos = rng.standard_normal((spec.vocab_size, max_dur, spec.feature_dim))
    for pair in spec.confusion_pairs:
        protos[pair.b] = pair.overlap * protos[pair.a] + (1.0 - pair.overlap) * protos[pair.b]
    return protos


def token_weights(spec: TaskSpec, variant: CorpusVariant = CorpusVariant.STANDARD) -> FloatArray:
    """Sampling distribution over tokens (Zipf-like; uniform when token_zipf = 0)."""
    ranks = np.arange(1, spec.vocab_size + 1, dtype=np.float64)
    weights = ranks ** (-spec.token_zipf)
    if variant == CorpusVariant.TAIL:
        rare = max(1, math.ceil(spec.vocab_size * spec.tail_fraction))
        weights[: spec.vocab_size - rare] = 0.0
    return weights / weights.sum()


def _stretch(prototype: FloatArray, frames: int) -> FloatArray:
    picks = np.round(np.linspace(0, prototype.shape[0] - 1, frames)).astype(np.int64)
    return prototype[picks]


def generate_corpus(
    spec: TaskSpec,
    num_utterances: int,
    variant: CorpusVariant = CorpusVariant.STANDARD,
) -> Corpus:
    """Generate ``num_utterances`` utterances; fully determined by ``spec.seed``.

    ``long`` doubles both utterance-length bounds; ``tail`` draws tokens only
    from the rarest ``tail_fraction`` of the vocabulary.
    """
    if num_utterances < 0:
        raise ValidationError("num_utterances must be >= 0")
    protos = make_prototypes(spec)
    weights = token_weights(spec, variant)
    lo, hi = spec.utterance_len_range
    if variant == CorpusVariant.LONG:
        lo, hi = 2 * lo, 2 * hi
    d_lo, d_hi = spec.duration_range
    rng = _generator(spec.seed, _UTTERANCE_STREAM, _VARIANT_IDS[variant])

    utterances: list[Utterance] = []
    for _ in range(num_utterances):
        length = int(rng.integers(lo, hi + 1))
        tokens = rng.choice(spec.vocab_size, size=length, p=weights)
        durations = rng.integers(d_lo, d_hi + 1, size=length)
        clean = np.concatenate(
            [_stretch(protos[tok], int(dur)) for tok, dur in zip(tokens, durations, strict=True)]
        )
        noisy = clean + spec.noise_sigma * rng.standard_normal(clean.shape)
        utterances.append(
            Utterance(
                frames=noisy.astype(np.float32),
                tokens=tuple(int(t) for t in tokens),
                alignment=tuple(int(t) for t in np.repeat(tokens, durations)),
            )
        )
    logger.debug("Generated %d %s utterances", num_utterances, variant.value)
    return Corpus(utterances, spec.feature_dim, spec.vocab_size)


def nearest_prototype_labels(frames: FloatArray, prototypes: FloatArray) -> list[int]:
    """Token of the closest prototype frame for every input frame."""
    flat = prototypes.reshape(-1, prototypes.shape[-1])
    owners = np.repeat(np.arange(prototypes.shape[0]), prototypes.shape[1])
    dists = ((frames[:, None, :] - flat[None, :, :]) ** 2).sum(axis=-1)
    return [int(owners[i]) for i in dists.argmin(axis=1)]


def make_batches(
    corpus: Corpus, batch_size: int, shuffle_seed: int | None = None
) -> list[SequenceBatch]:
    """Partition a corpus into zero-padded batches.

    The order is shuffled with ``shuffle_seed`` when given; the last partial
    batch is kept.

    Raises:
        ValidationError: On an empty corpus or batch_size < 1.
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    if len(corpus) == 0:
        raise ValidationError("cannot batch an empty corpus")
    order = np.arange(len(corpus))
    if shuffle_seed is not None:
        order = _generator(shuffle_seed).permutation(len(corpus))
    return [
        SequenceBatch.from_utterances(
            [corpus.utterances[i] for i in order[start : start + batch_size]]
        )
        for start in range(0, len(corpus), batch_size)
    ]


def split(
    corpus: Corpus, fractions: tuple[float, float, float], seed: int = 0
) -> tuple[Corpus, Corpus, Corpus]:
    """Disjoint train/dev/test split, deterministic in ``seed``.

    Raises:
        ValidationError: If a fraction is outside [0, 1] or they do not sum to 1.
    """
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValidationError(f"split fractions must lie in [0, 1], got {fractions}")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValidationError(f"split fractions must sum to 1, got {sum(fractions)}")
    n = len(corpus)
    order = _generator(seed, _UTTERANCE_STREAM, 99).permutation(n)
    n_train = math.floor(fractions[0] * n + 1e-9)
    n_dev = min(n - n_train, math.floor(fractions[1] * n + 1e-9))
    return (
        corpus.subset(order[:n_train]),
        corpus.subset(order[n_train : n_train + n_dev]),
        corpus.subset(order[n_train + n_dev :]),
    )


def generate_dataset(config: DataConfig) -> dict[str, tuple[Corpus, CorpusVariant]]:
    """All splits of a corpus: train/dev/test plus the long and tail test sets.

    Every split is a pure function of ``config``; the task seed also drives
    the train/dev/test partition.
    """
    task = config.task
    train_set, dev_set, test_set = split(
        generate_corpus(task, config.num_utterances), config.split_fractions, task.seed
    )
    return {
        "train": (train_set, CorpusVariant.STANDARD),
        "dev": (dev_set, CorpusVariant.STANDARD),
        "test": (test_set, CorpusVariant.STANDARD),
        "long": (generate_corpus(task, config.long_utterances, CorpusVariant.LONG),
                 CorpusVariant.LONG),
        "tail": (generate_corpus(task, config.tail_utterances, CorpusVariant.TAIL),
                 CorpusVariant.TAIL),
    }
