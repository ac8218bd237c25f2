"""Greedy and beam-search inference, plus edit-distance scoring.

Greedy and beam search rank candidates with the same rule: higher score
first, then the shorter token sequence, then the lexicographically smaller
one. Under that rule a beam of one reproduces greedy decoding exactly.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from codert.exceptions import OracleLimitError, ValidationError
from codert.logging import get_logger
from codert.models import Hypothesis
from codert.network import DecoderState, ParamSet, RnntParams, decoder_step, encoder_forward
from codert.numerics import FloatArray, log_softmax

logger = get_logger(__name__)

DEFAULT_MAX_SYMBOLS = 10
EXHAUSTIVE_MAX_FRAMES = 3
EXHAUSTIVE_MAX_CLASSES = 4


@dataclass
class DecodeStats:
    """Counters accumulated across decoding calls."""

    utterances: int = 0
    cap_hits: int = 0


def _rank_key(tokens: tuple[int, ...], score: float) -> tuple[float, int, tuple[int, ...]]:
    return (-score, len(tokens), tokens)


def _frame_log_probs(enc_frame: FloatArray, dec_logits: FloatArray) -> FloatArray:
    return log_softmax(np.tanh(enc_frame + dec_logits))


def encode(params: RnntParams, frames: npt.ArrayLike, which: str = "student") -> FloatArray:
    """Encoder logits [T', V+1] of one utterance."""
    out, _ = encoder_forward(params.encoder(which), frames)
    return out.utterance(0)


def greedy_search(
    enc_logits: FloatArray,
    decoder: ParamSet,
    max_symbols: int = DEFAULT_MAX_SYMBOLS,
    stats: DecodeStats | None = None,
) -> Hypothesis:
    """Best-first single-path search; blank advances to the next frame."""
    blank = enc_logits.shape[1] - 1
    logits, state = decoder_step(decoder, None)
    tokens: list[int] = []
    score = 0.0
    for t in range(enc_logits.shape[0]):
        for emitted in range(max_symbols + 1):
            candidates = score + _frame_log_probs(enc_logits[t], logits)
            best = int(np.argmax(candidates[:blank]))
            if emitted == max_symbols:
                if stats is not None:
                    stats.cap_hits += 1
                score = candidates[blank]
                break
            if candidates[blank] >= candidates[best]:
                score = candidates[blank]
                break
            score = candidates[best]
            tokens.append(best)
            logits, state = decoder_step(decoder, best, state)
    return Hypothesis(tuple(tokens), float(score), state, logits)


def _merge(finished: dict[tuple[int, ...], Hypothesis], hyp: Hypothesis) -> None:
    existing = finished.get(hyp.tokens)
    if existing is None:
        finished[hyp.tokens] = hyp
    else:
        existing.log_prob = float(np.logaddexp(existing.log_prob, hyp.log_prob))


def beam_search(
    enc_logits: FloatArray,
    decoder: ParamSet,
    beam: int,
    max_symbols: int = DEFAULT_MAX_SYMBOLS,
    stats: DecodeStats | None = None,
) -> list[Hypothesis]:
    """Time-synchronous transducer beam search.

    For every frame, active hypotheses are expanded for up to
    ``max_symbols`` rounds. A blank extension moves a hypothesis to the
    frame's finished set, where equal token sequences are merged by log-add;
    finished and still-emitting hypotheses compete for the same ``beam``
    slots after every round.

    Returns:
        The final hypotheses, best first.
    """
    if beam < 1:
        raise ValidationError(f"beam must be >= 1, got {beam}")
    blank = enc_logits.shape[1] - 1
    start_logits, start_state = decoder_step(decoder, None)
    hyps = [Hypothesis((), 0.0, start_state, start_logits)]
    for t in range(enc_logits.shape[0]):
        finished: dict[tuple[int, ...], Hypothesis] = {}
        active = hyps
        for round_ in range(max_symbols + 1):
            emits: list[tuple[tuple[int, ...], float, Hypothesis]] = []
            for hyp in active:
                assert hyp.decoder_logits is not None
                candidates = hyp.log_prob + _frame_log_probs(enc_logits[t], hyp.decoder_logits)
                _merge(
                    finished,
                    Hypothesis(hyp.tokens, float(candidates[blank]), hyp.decoder_state,
                               hyp.decoder_logits),
                )
                if round_ == max_symbols:
                    if stats is not None:
                        stats.cap_hits += 1
                    continue
                emits.extend(
                    (hyp.tokens + (k,), float(candidates[k]), hyp) for k in range(blank)
                )
            pool: list[tuple[tuple[float, int, tuple[int, ...]], bool, int]] = [
                (_rank_key(h.tokens, h.log_prob), True, i)
                for i, h in enumerate(finished.values())
            ]
            pool += [(_rank_key(tok, sc), False, i) for i, (tok, sc, _) in enumerate(emits)]
            pool.sort(key=lambda item: item[0])
            kept = pool[:beam]
            finished_list = list(finished.values())
            finished = {
                finished_list[i].tokens: finished_list[i] for _, is_fin, i in kept if is_fin
            }
            active = []
            for _, is_fin, i in kept:
                if is_fin:
                    continue
                tokens, score, parent = emits[i]
                logits, state = decoder_step(decoder, tokens[-1], parent.decoder_state)
                active.append(Hypothesis(tokens, score, state, logits))
            if not active:
                break
        hyps = sorted(finished.values(), key=lambda h: _rank_key(h.tokens, h.log_prob))
    return hyps


def exhaustive_search(
    enc_logits: FloatArray, decoder: ParamSet, max_symbols: int = 1
) -> Hypothesis:
    """Enumerate every per-frame emission pattern (test oracle for tiny models).

    Paths with equal token sequences are merged by log-add; the best merged
    sequence under the shared ranking rule is returned.

    Raises:
        OracleLimitError: If T' > 3 or V+1 > 4.
    """
    T, classes = enc_logits.shape
    if T > EXHAUSTIVE_MAX_FRAMES or classes > EXHAUSTIVE_MAX_CLASSES:
        raise OracleLimitError("oracle size limit")
    blank = classes - 1
    states: dict[tuple[int, ...], tuple[FloatArray, DecoderState]] = {
        (): decoder_step(decoder, None)
    }

    def step(tokens: tuple[int, ...]) -> tuple[FloatArray, DecoderState]:
        if tokens not in states:
            parent_state = step(tokens[:-1])[1]
            states[tokens] = decoder_step(decoder, tokens[-1], parent_state)
        return states[tokens]

    totals: dict[tuple[int, ...], float] = {(): 0.0}
    for t in range(T):
        merged: dict[tuple[int, ...], float] = {}
        for prefix, prefix_score in totals.items():
            stack = [(prefix, prefix_score, 0)]
            while stack:
                tokens, score, emitted = stack.pop()
                lp = _frame_log_probs(enc_logits[t], step(tokens)[0])
                merged[tokens] = float(np.logaddexp(merged.get(tokens, -np.inf), score + lp[blank]))
                if emitted < max_symbols:
                    stack.extend((tokens + (k,), score + lp[k], emitted + 1) for k in range(blank))
        totals = merged
    tokens, score = min(totals.items(), key=lambda kv: _rank_key(kv[0], kv[1]))
    return Hypothesis(tokens, score)


def greedy_decode(
    params: RnntParams,
    frames: npt.ArrayLike,
    which: str = "student",
    max_symbols: int = DEFAULT_MAX_SYMBOLS,
    stats: DecodeStats | None = None,
) -> list[int]:
    """Greedy transcription of one utterance."""
    enc_logits = encode(params, frames, which)
    hyp = greedy_search(enc_logits, params.decoder_for(which), max_symbols, stats)
    return list(hyp.tokens)


def beam_decode(
    params: RnntParams,
    frames: npt.ArrayLike,
    beam: int,
    which: str = "student",
    max_symbols: int = DEFAULT_MAX_SYMBOLS,
    stats: DecodeStats | None = None,
) -> list[int]:
    """Beam-search transcription of one utterance (best hypothesis)."""
    hyps = beam_search(
        encode(params, frames, which), params.decoder_for(which), beam, max_symbols, stats
    )
    return list(hyps[0].tokens)


def exhaustive_decode(
    params: RnntParams, frames: npt.ArrayLike, max_symbols: int = 1, which: str = "student"
) -> tuple[list[int], float]:
    """Best token sequence and its merged score by full enumeration."""
    hyp = exhaustive_search(encode(params, frames, which), params.decoder_for(which), max_symbols)
    return list(hyp.tokens), hyp.log_prob


def transcribe(
    params: RnntParams,
    utterances: Sequence[npt.ArrayLike],
    which: str = "student",
    beam: int = 6,
    max_symbols: int = DEFAULT_MAX_SYMBOLS,
) -> list[list[int]]:
    """Decode a list of utterances; beam 1 takes the greedy path."""
    stats = DecodeStats()
    hyps = []
    for frames in utterances:
        if beam == 1:
            hyps.append(greedy_decode(params, frames, which, max_symbols, stats))
        else:
            hyps.append(beam_decode(params, frames, beam, which, max_symbols, stats))
        stats.utterances += 1
    if stats.cap_hits:
        logger.warning(
            "Emission cap of %d symbols/frame hit %d times over %d utterances",
            max_symbols, stats.cap_hits, stats.utterances,
        )
    return hyps


def edit_distance(ref: Sequence[int], hyp: Sequence[int]) -> int:
    """Levenshtein distance with unit costs (two-row dynamic programme)."""
    a, b = list(ref), list(hyp)
    if len(a) > len(b):
        a, b = b, a
    current = list(range(len(a) + 1))
    for i in range(1, len(b) + 1):
        previous, current = current, [i] + [0] * len(a)
        for j in range(1, len(a) + 1):
            change = previous[j - 1] + (a[j - 1] != b[i - 1])
            current[j] = min(previous[j] + 1, current[j - 1] + 1, change)
    return current[len(a)]


def wer(refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]]) -> float:
    """Corpus token error rate: total edits over total reference tokens.

    Raises:
        ValidationError: If the lists differ in length or references are empty.
    """
    if len(refs) != len(hyps):
        raise ValidationError(f"{len(refs)} references but {len(hyps)} hypotheses")
    ref_tokens = sum(len(r) for r in refs)
    if ref_tokens == 0:
        raise ValidationError("total reference length is zero")
    return sum(edit_distance(r, h) for r, h in zip(refs, hyps, strict=True)) / ref_tokens


def relative_werr(base: float, new: float) -> float:
    """Relative error-rate reduction of ``new`` over ``base`` in percent."""
    if base <= 0:
        raise ValidationError("baseline WER must be positive")
    return (base - new) / base * 100.0
