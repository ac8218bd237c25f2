"""Tests for greedy/beam decoding and error-rate scoring."""

from __future__ import annotations

import numpy as np
import pytest

from codert.config import DecoderConfig
from codert.decoding import (
    DecodeStats,
    beam_decode,
    beam_search,
    edit_distance,
    encode,
    exhaustive_decode,
    exhaustive_search,
    greedy_decode,
    greedy_search,
    relative_werr,
    transcribe,
    wer,
)
from codert.exceptions import OracleLimitError, ValidationError
from codert.network import RnntParams, zero_params
from codert.selfcheck import toy_params


@pytest.fixture
def flat_decoder(toy_decoder_config: DecoderConfig):
    """Prediction network whose logits are zero for every history."""
    return zero_params(toy_decoder_config)


def test_all_blank_lattice_decodes_empty(flat_decoder):
    """Test a blank-dominated input decodes to nothing."""
    enc = np.tile([0.0, 0.0, 0.0, 0.0, 20.0], (4, 1))
    assert greedy_search(enc, flat_decoder).tokens == ()
    assert beam_search(enc, flat_decoder, beam=4)[0].tokens == ()


def test_emission_cap_truncates_frame(flat_decoder):
    """Test the per-frame emission cap is enforced and counted."""
    enc = np.array([[20.0, 0.0, 0.0, 0.0, 0.0]])
    stats = DecodeStats()
    hyp = greedy_search(enc, flat_decoder, max_symbols=3, stats=stats)
    assert hyp.tokens == (0, 0, 0)
    assert stats.cap_hits == 1


def test_greedy_matches_beam_of_one(params: RnntParams, rng: np.random.Generator):
    """Test beam search with width 1 equals greedy search."""
    for _ in range(10):
        frames = rng.standard_normal((int(rng.integers(2, 10)), 3))
        enc = encode(params, frames)
        decoder = params.decoder_for("student")
        greedy = greedy_search(enc, decoder, max_symbols=3)
        beam = beam_search(enc, decoder, beam=1, max_symbols=3)[0]
        assert greedy.tokens == beam.tokens
        assert greedy.log_prob == beam.log_prob


def test_beam_matches_exhaustive_on_tiny_models(rng: np.random.Generator):
    """Test a wide beam finds the exhaustive best."""
    for _ in range(5):
        params = toy_params(rng, classes=3)
        frames = rng.standard_normal((int(rng.integers(1, 7)), 3))
        tokens, score = exhaustive_decode(params, frames, max_symbols=1)
        best = beam_search(encode(params, frames), params.decoder_for("student"), 64, 1)[0]
        assert best.log_prob == pytest.approx(score, abs=1e-6)
        assert list(best.tokens) == tokens


def test_exhaustive_refuses_large_inputs(flat_decoder):
    """Test exhaustive search refuses inputs past its size limit."""
    with pytest.raises(OracleLimitError, match="oracle size limit"):
        exhaustive_search(np.zeros((4, 5)), flat_decoder)


def test_beam_must_be_positive(flat_decoder):
    """Test a zero beam raises ValidationError."""
    with pytest.raises(ValidationError):
        beam_search(np.zeros((2, 5)), flat_decoder, beam=0)


def test_beam_hypotheses_are_ranked(params: RnntParams, rng: np.random.Generator):
    """Test the n-best list is sorted by score."""
    enc = encode(params, rng.standard_normal((6, 3)))
    hyps = beam_search(enc, params.decoder_for("student"), beam=4)
    scores = [h.log_prob for h in hyps]
    assert scores == sorted(scores, reverse=True)
    assert len({h.tokens for h in hyps}) == len(hyps)
    assert all(4 not in h.tokens for h in hyps)


def test_decoding_is_deterministic(params: RnntParams, rng: np.random.Generator):
    """Test repeated decoding gives the same result."""
    frames = rng.standard_normal((7, 3))
    assert beam_decode(params, frames, 3) == beam_decode(params, frames, 3)
    assert greedy_decode(params, frames, which="teacher") == greedy_decode(
        params, frames, which="teacher"
    )


def test_transcribe_beam_one_is_greedy(params: RnntParams, rng: np.random.Generator):
    """Test transcribe with beam 1 uses greedy decoding."""
    utterances = [rng.standard_normal((n, 3)) for n in (3, 5, 8)]
    assert transcribe(params, utterances, beam=1) == [
        greedy_decode(params, u) for u in utterances
    ]


def test_edit_distance_examples():
    """Test edit distance on hand-worked pairs."""
    assert edit_distance([1, 2, 3], [1, 2, 3]) == 0
    assert edit_distance([], [4, 5, 6]) == 3
    assert edit_distance([0, 1, 2], [0, 9, 2, 3]) == 2


def test_edit_distance_metric_properties(rng: np.random.Generator):
    """Test symmetry and the triangle inequality."""
    for _ in range(30):
        a, b, c = (list(rng.integers(0, 3, size=int(rng.integers(0, 6)))) for _ in range(3))
        assert edit_distance(a, b) == edit_distance(b, a)
        assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


def test_wer_values():
    """Test corpus WER pools errors over all references."""
    assert wer([[1, 2], [3]], [[1, 2], [3]]) == 0.0
    refs = [[1, 2, 3], [4, 5], [6]]
    hyps = [[1, 3], [4, 5, 7], []]
    direct = sum(edit_distance(r, h) for r, h in zip(refs, hyps, strict=True)) / 6
    assert wer(refs, hyps) == pytest.approx(direct)
    assert wer(refs, hyps) == pytest.approx(3 / 6)


def test_wer_errors():
    """Test zero reference tokens and mismatched lists are rejected."""
    with pytest.raises(ValidationError, match="zero"):
        wer([[]], [[1]])
    with pytest.raises(ValidationError):
        wer([[1]], [])


def test_relative_werr():
    """Test relative WER reduction in percent."""
    assert relative_werr(9.7, 9.1) == pytest.approx(6.18, abs=0.01)
    with pytest.raises(ValidationError):
        relative_werr(0.0, 1.0)
