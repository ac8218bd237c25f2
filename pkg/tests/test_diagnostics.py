"""Tests for entropy, confusion and teacher-student error diagnostics."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from codert.config import DecoderConfig, EncoderConfig
from codert.diagnostics import (
    ENTROPY_BINS,
    confusion_table,
    entropy_histograms,
    paired_encoder_mse,
    pick_batch,
    record_paired_mse,
    top1_agreement,
    ts_error_curve,
    write_confusion_tsv,
    write_error_curves,
    write_histograms_csv,
)
from codert.exceptions import DiagnosticsError, ValidationError
from codert.models import Corpus, EvalRecord, SequenceBatch, StepRecord
from codert.network import RnntParams, reduced_lengths, zero_params
from codert.stores.metrics_store import MetricsStore


def _step(step: int, mse: float | None) -> StepRecord:
    return StepRecord(
        step=step, lr=1e-3, loss_rnnt_s=1.0, loss_rnnt_t=1.0, loss_distill=mse or 0.0,
        loss_total=2.0, grad_norm_s=0.1, grad_norm_t=0.1, grad_norm_dec=0.1, ts_encoder_mse=mse,
    )


def _write_run(path: Path, values: dict[int, float]) -> Path:
    store = MetricsStore(path / "metrics.jsonl")
    for step, mse in values.items():
        store.append(_step(step, mse))
    return path


def test_untrained_model_is_maximally_uncertain(
    toy_encoder_config: EncoderConfig, toy_decoder_config: DecoderConfig, batch: SequenceBatch
):
    """Test zero weights give entropy ln(V+1) everywhere."""
    params = RnntParams(
        {
            "teacher_encoder": zero_params(toy_encoder_config),
            "decoder": zero_params(toy_decoder_config),
        }
    )
    hists = entropy_histograms(params, batch, which="teacher")
    for hist in hists.values():
        assert hist.mean == pytest.approx(math.log(5), abs=1e-9)
        assert hist.counts[-1] == hist.total


def test_histogram_totals(params: RnntParams, batch: SequenceBatch):
    """Test each histogram counts every valid frame or node."""
    hists = entropy_histograms(params, batch, which="student")
    frames = reduced_lengths(batch.feature_lengths, 2)
    rows = batch.label_lengths + 1
    assert hists["encoder"].total == int(frames.sum())
    assert hists["decoder"].total == int(rows.sum())
    assert hists["joint"].total == int((frames * rows).sum())
    for hist in hists.values():
        assert len(hist.counts) == ENTROPY_BINS
        assert hist.bin_edges[-1] == pytest.approx(math.log(5))


def test_histogram_csv(tmp_path: Path, params: RnntParams, batch: SequenceBatch):
    """Test one CSV per softmax with nats bin headers."""
    paths = write_histograms_csv(entropy_histograms(params, batch), tmp_path)
    assert sorted(p.name for p in paths) == [
        "entropy_decoder.csv", "entropy_encoder.csv", "entropy_joint.csv"
    ]
    lines = (tmp_path / "entropy_joint.csv").read_text().splitlines()
    assert lines[0] == "bin_left_nats,bin_right_nats,count"
    assert len(lines) == ENTROPY_BINS + 1


def test_confusion_full_mass_sums_to_one(params: RnntParams, batch: SequenceBatch):
    """Test each label's full ranking is sorted and sums to one."""
    entries = confusion_table(params, batch, top_n=5)
    assert sum(e.frames for e in entries) == int(batch.label_lengths.sum())
    for entry in entries:
        assert sum(mass for _, mass in entry.ranked) == pytest.approx(1.0, abs=1e-9)
        masses = [mass for _, mass in entry.ranked]
        assert masses == sorted(masses, reverse=True)
    assert 0.0 <= top1_agreement(entries) <= 1.0


def test_confusion_top_n_bounds(params: RnntParams, batch: SequenceBatch):
    """Test top_n must lie in [1, V+1]."""
    for bad in (0, 6):
        with pytest.raises(ValidationError):
            confusion_table(params, batch, top_n=bad)
    assert all(len(e.ranked) == 2 for e in confusion_table(params, batch, top_n=2))


def test_confusion_tsv(tmp_path: Path, params: RnntParams, batch: SequenceBatch):
    """Test the confusion table TSV layout."""
    path = tmp_path / "confusion.tsv"
    entries = confusion_table(params, batch, top_n=3)
    write_confusion_tsv(entries, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "ref_token\trank\ttoken\tmass"
    assert len(lines) == 1 + 3 * len(entries)


def test_top1_agreement_of_nothing():
    """Test agreement over no entries is zero."""
    assert top1_agreement([]) == 0.0


def test_pick_batch_is_seeded(tiny_corpus: Corpus):
    """Test the same seed picks the same batch."""
    a = pick_batch(tiny_corpus, 4, seed=2)
    b = pick_batch(tiny_corpus, 4, seed=2)
    assert np.array_equal(a.labels, b.labels)


def test_paired_mse_of_identical_encoders(params: RnntParams, batch: SequenceBatch):
    """Test an encoder paired with itself has zero MSE."""
    student = params.encoder("student")
    assert paired_encoder_mse(student, student, [batch]) == 0.0
    assert paired_encoder_mse(student, params.encoder("teacher"), [batch]) > 0.0
    with pytest.raises(ValidationError):
        paired_encoder_mse(student, student, [])


def test_error_curve_of_a_run_against_itself(tmp_path: Path):
    """Test duplicate run names and the final window mean."""
    run = _write_run(tmp_path / "colearn", {0: 1.0, 500: 0.5, 1000: 0.2, 1500: 0.1})
    curves = ts_error_curve([run, run], window=1000)
    assert list(curves.series) == ["colearn", "colearn#2"]
    assert curves.series["colearn"] == curves.series["colearn#2"]
    assert curves.steps == [0, 500, 1000, 1500]
    # window covers steps 1000 and 1500
    assert curves.final_means["colearn"] == pytest.approx(0.15)


def test_error_curve_falls_back_to_paired_records(tmp_path: Path):
    """Test curves read paired MSE records when steps lack them."""
    path = tmp_path / "separate" / "metrics.jsonl"
    store = MetricsStore(path)
    store.append(_step(0, None))
    store.append(EvalRecord(step=0, split="dev", wer_student=0.5, beam=1))
    record_paired_mse(path, 100, 0.7)
    curves = ts_error_curve([path])
    assert curves.series == {"separate": {100: 0.7}}


def test_error_curve_requires_values(tmp_path: Path):
    """Test a run with no MSE values raises DiagnosticsError."""
    path = tmp_path / "baseline" / "metrics.jsonl"
    MetricsStore(path).append(_step(0, None))
    with pytest.raises(DiagnosticsError, match="baseline"):
        ts_error_curve([path])


def test_error_curve_csv_and_gnuplot(tmp_path: Path):
    """Test the curve CSV and gnuplot script."""
    a = _write_run(tmp_path / "a", {0: 1.0, 10: 0.5})
    b = _write_run(tmp_path / "b", {10: 0.25})
    out = tmp_path / "curves.csv"
    written = write_error_curves(ts_error_curve([a, b]), out, gnuplot=True)
    assert written == [out, tmp_path / "curves.gp"]
    assert out.read_text().splitlines() == ["step,a,b", "0,1,", "10,0.5,0.25"]
    script = (tmp_path / "curves.gp").read_text()
    assert "using 1:2" in script
    assert "using 1:3" in script
