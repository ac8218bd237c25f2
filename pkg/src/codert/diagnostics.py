"""Post-hoc analyses of trained models and training logs.

Entropy densities of the three output distributions, encoder confusion
tables, and teacher-student encoder-error curves. Every entropy is in nats.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from codert.data_synth import make_batches
from codert.distillation import teacher_student_mse
from codert.exceptions import DiagnosticsError, ValidationError
from codert.lattice import JointLattice, greedy_forced_path
from codert.logging import get_logger
from codert.models import Corpus, EvalRecord, Histogram, SequenceBatch
from codert.network import (
    ParamSet,
    RnntParams,
    decoder_forward,
    encoder_forward,
    joint_forward,
)
from codert.numerics import FloatArray, softmax, softmax_entropy
from codert.stores._atomic import atomic_write
from codert.stores.metrics_store import MetricsStore

logger = get_logger(__name__)

ENTROPY_BINS = 64
COMPONENTS = ("encoder", "decoder", "joint")
METRICS_FILE = "metrics.jsonl"


def _histogram(values: FloatArray, num_classes: int) -> Histogram:
    edges = np.linspace(0.0, math.log(num_classes), ENTROPY_BINS + 1)
    # rounding can put a uniform row's entropy a hair past ln C
    counts, _ = np.histogram(np.clip(values, edges[0], edges[-1]), bins=edges)
    return Histogram(
        bin_edges=edges,
        counts=counts.astype(np.int64),
        total=int(values.size),
        mean=float(values.mean()) if values.size else 0.0,
    )


def entropy_histograms(
    params: RnntParams, batch: SequenceBatch, which: str = "teacher"
) -> dict[str, Histogram]:
    """Entropy densities of the encoder, decoder and joint softmax outputs.

    Every valid encoder frame, every valid decoder step (including the start
    row) and every (t, u) node of every utterance's lattice contributes one
    entropy.
    """
    enc, _ = encoder_forward(params.encoder(which), batch.features, batch.feature_lengths)
    dec, _ = decoder_forward(params.decoder_for(which), batch.labels, batch.label_lengths)
    per_component: dict[str, list[FloatArray]] = {c: [] for c in COMPONENTS}
    for b in range(batch.size):
        enc_b, dec_b = enc.utterance(b), dec.utterance(b)
        per_component["encoder"].append(softmax_entropy(enc_b))
        per_component["decoder"].append(softmax_entropy(dec_b))
        per_component["joint"].append(softmax_entropy(joint_forward(enc_b, dec_b)).reshape(-1))
    num_classes = enc.logits.shape[-1]
    hists = {c: _histogram(np.concatenate(v), num_classes) for c, v in per_component.items()}
    logger.info(
        "Mean entropy (nats): %s",
        ", ".join(f"{c}={h.mean:.4f}" for c, h in hists.items()),
    )
    return hists


def write_histograms_csv(hists: dict[str, Histogram], out_dir: Path) -> list[Path]:
    """One ``entropy_<component>.csv`` per component."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for component, hist in hists.items():
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin_left_nats", "bin_right_nats", "count"])
        for left, right, count in zip(
            hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts, strict=True
        ):
            writer.writerow([f"{left:.6f}", f"{right:.6f}", int(count)])
        path = out_dir / f"entropy_{component}.csv"
        atomic_write(path, buf.getvalue())
        paths.append(path)
    return paths


def pick_batch(corpus: Corpus, batch_size: int, seed: int) -> SequenceBatch:
    """A seeded random batch of ``corpus``."""
    batches = make_batches(corpus, batch_size, shuffle_seed=seed)
    index = int(np.random.default_rng(seed).integers(len(batches)))
    return batches[index]


@dataclass
class ConfusionEntry:
    """Encoder-softmax mass aggregated over the frames attributed to one token."""

    ref_token: int
    frames: int
    ranked: list[tuple[int, float]] = field(default_factory=list)


def frame_attributions(
    params: RnntParams, batch: SequenceBatch, which: str = "teacher"
) -> list[tuple[int, FloatArray]]:
    """(reference token, encoder softmax at its frame) for every label in a batch.

    Each label is attributed the frame at which the greedy posterior path
    through its utterance's lattice emits it.
    """
    enc, _ = encoder_forward(params.encoder(which), batch.features, batch.feature_lengths)
    dec, _ = decoder_forward(params.decoder_for(which), batch.labels, batch.label_lengths)
    pairs: list[tuple[int, FloatArray]] = []
    for b in range(batch.size):
        enc_b = enc.utterance(b)
        labels = batch.label_sequence(b)
        lattice = JointLattice(joint_forward(enc_b, dec.utterance(b)))
        probs = softmax(enc_b)
        for frame, position in greedy_forced_path(lattice, labels):
            pairs.append((int(labels[position]), probs[frame]))
    return pairs


def confusion_table(
    params: RnntParams, batch: SequenceBatch, top_n: int = 3, which: str = "teacher"
) -> list[ConfusionEntry]:
    """Top-``top_n`` encoder tokens per reference token, with mass fractions.

    Mass fractions are averages of the encoder softmax over the token's
    attributed frames, so they sum to 1 when ``top_n`` covers all V+1 classes.

    Raises:
        ValidationError: If ``top_n`` is outside [1, V+1].
    """
    classes = params.encoder(which).config.output_dim
    if not 1 <= top_n <= classes:
        raise ValidationError(f"top_n={top_n} outside [1, {classes}]")
    sums: dict[int, FloatArray] = {}
    counts: dict[int, int] = {}
    for token, probs in frame_attributions(params, batch, which):
        sums[token] = sums.get(token, np.zeros(classes)) + probs
        counts[token] = counts.get(token, 0) + 1
    entries = []
    for token in sorted(sums):
        mass = sums[token] / counts[token]
        order = np.argsort(-mass, kind="stable")[:top_n]
        entries.append(
            ConfusionEntry(token, counts[token], [(int(k), float(mass[k])) for k in order])
        )
    return entries


def top1_agreement(entries: Sequence[ConfusionEntry]) -> float:
    """Share of attributed frames whose reference token ranks first."""
    frames = sum(e.frames for e in entries)
    if frames == 0:
        return 0.0
    return sum(e.frames for e in entries if e.ranked and e.ranked[0][0] == e.ref_token) / frames


def write_confusion_tsv(entries: Sequence[ConfusionEntry], path: Path) -> None:
    lines = ["ref_token\trank\ttoken\tmass"]
    for entry in entries:
        for rank, (token, mass) in enumerate(entry.ranked, start=1):
            lines.append(f"{entry.ref_token}\t{rank}\t{token}\t{mass:.6f}")
    atomic_write(path, "\n".join(lines) + "\n")


def paired_encoder_mse(
    student: ParamSet, teacher: ParamSet, batches: Iterable[SequenceBatch]
) -> float:
    """Mean teacher-student encoder-logit MSE of two separately trained encoders.

    Raises:
        ValidationError: If ``batches`` is empty.
    """
    values = []
    for batch in batches:
        s_enc, _ = encoder_forward(student, batch.features, batch.feature_lengths)
        t_enc, _ = encoder_forward(teacher, batch.features, batch.feature_lengths)
        values.append(teacher_student_mse(s_enc, t_enc))
    if not values:
        raise ValidationError("paired encoder MSE needs at least one batch")
    return float(np.mean(values))


def record_paired_mse(metrics_path: Path, step: int, mse: float, split: str = "dev") -> None:
    """Append a paired-evaluation MSE to a run's metrics log."""
    MetricsStore(metrics_path).append(
        EvalRecord(step=step, split=split, beam=0, ts_encoder_mse=mse)
    )


@dataclass
class ErrorCurves:
    """Teacher-student encoder MSE per step for several runs."""

    steps: list[int]
    series: dict[str, dict[int, float]]
    final_means: dict[str, float]


def _run_name(path: Path) -> str:
    return path.parent.name if path.name == METRICS_FILE else path.stem


def _metrics_file(path: Path) -> Path:
    return path / METRICS_FILE if path.is_dir() else path


def _mse_series(store: MetricsStore) -> dict[int, float]:
    records = store.read()
    series = {
        r.step: r.ts_encoder_mse
        for r in records
        if r.kind == "step" and r.ts_encoder_mse is not None
    }
    if not series:
        series = {
            r.step: r.ts_encoder_mse
            for r in records
            if isinstance(r, EvalRecord) and r.ts_encoder_mse is not None
        }
    return series


def ts_error_curve(paths: Sequence[Path], window: int = 1000) -> ErrorCurves:
    """Align the teacher-student MSE series of several runs by step.

    A run contributes its per-step ``ts_encoder_mse`` when it logged one,
    otherwise its paired-evaluation records. The final-window mean covers
    steps greater than ``last_step - window``.

    Raises:
        DiagnosticsError: If a run has no MSE values at all.
    """
    series: dict[str, dict[int, float]] = {}
    for path in paths:
        base = _run_name(_metrics_file(path))
        name, n = base, 1
        while name in series:
            n += 1
            name = f"{base}#{n}"
        values = _mse_series(MetricsStore(_metrics_file(path)))
        if not values:
            raise DiagnosticsError(f"run '{base}' has no ts_encoder_mse values ({path})")
        series[name] = values
    steps = sorted({s for values in series.values() for s in values})
    final_means = {}
    for name, values in series.items():
        last = max(values)
        tail = [v for s, v in values.items() if s > last - window]
        final_means[name] = float(np.mean(tail))
    return ErrorCurves(steps, series, final_means)


def write_error_curves(curves: ErrorCurves, path: Path, gnuplot: bool = False) -> list[Path]:
    """Write ``step,<run>...`` CSV (empty cells where a run has no value).

    With ``gnuplot`` a ``.gp`` script plotting every column is written next to it.
    """
    names = list(curves.series)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", *names])
    for step in curves.steps:
        row: list[str | int] = [step]
        for name in names:
            value = curves.series[name].get(step)
            row.append("" if value is None else f"{value:.8g}")
        writer.writerow(row)
    atomic_write(path, buf.getvalue())
    written = [path]
    if gnuplot:
        plots = ", ".join(
            f"'{path.name}' using 1:{i + 2} with lines" for i in range(len(names))
        )
        script = (
            "set datafile separator ','\n"
            "set key autotitle columnhead\n"
            "set xlabel 'step'\n"
            "set ylabel 'teacher-student encoder MSE'\n"
            f"plot {plots}\n"
        )
        gp_path = path.with_suffix(".gp")
        atomic_write(gp_path, script)
        written.append(gp_path)
    return written
