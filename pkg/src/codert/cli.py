"""codert CLI - Command line interface."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path
from typing import Any

import click
from rich.console import Console
from rich.table import Table

from codert import __version__
from codert.config import TrainingMode, load_config, load_data_config
from codert.exceptions import CodertError, ConfigurationError, SelfCheckError, ValidationError
from codert.logging import get_logger, setup_logging

logger = get_logger(__name__)
console = Console()

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2

MODES = {
    "baseline": TrainingMode.BASELINE,
    "static": TrainingMode.STATIC,
    "colearn": TrainingMode.COLEARN,
    "separate": TrainingMode.SEPARATE,
}
BLAS_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class CodertGroup(click.Group):
    """Click group that maps every failure onto the documented exit codes.

    Usage errors and invalid inputs exit with 1, runtime failures with 2.
    """

    def main(  # type: ignore[override]
        self,
        args: list[str] | None = None,
        prog_name: str | None = None,
        complete_var: str | None = None,
        standalone_mode: bool = True,
        **extra: Any,
    ) -> int:
        try:
            result = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
            code = result if isinstance(result, int) else EXIT_OK
        except click.ClickException as e:
            e.show()
            code = EXIT_INVALID
        except click.Abort:
            click.echo("Aborted!", err=True)
            code = EXIT_INVALID
        except (ConfigurationError, ValidationError) as e:
            click.echo(f"Error: {e}", err=True)
            code = EXIT_INVALID
        except (CodertError, OSError) as e:
            click.echo(f"Error: {e}", err=True)
            code = EXIT_FAILURE
        if standalone_mode:
            sys.exit(code)
        return code


def _configure_threads() -> None:
    """Cap BLAS worker threads from CODERT_THREADS (default 1 for determinism)."""
    threads = os.environ.get("CODERT_THREADS")
    for var in BLAS_THREAD_VARS:
        if threads is not None:
            os.environ[var] = threads
        else:
            os.environ.setdefault(var, "1")


@click.group(cls=CodertGroup)
@click.version_option(version=__version__, prog_name="codert")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.pass_context
def main(ctx: click.Context, verbose: bool) -> None:
    """codert - RNN-Transducer training with co-learned encoder distillation."""
    _configure_threads()
    ctx.ensure_object(dict)
    ctx.obj["log_level"] = 10 if verbose else 20
    setup_logging(level=ctx.obj["log_level"])


@main.command("gen-data")
@click.option("--spec", "spec_path", required=True, type=click.Path(path_type=Path),
              help="Task spec (YAML/JSON)")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path),
              help="Corpus directory")
@click.option("--num", type=click.IntRange(min=0), default=None,
              help="Utterances before the train/dev/test split")
def gen_data(spec_path: Path, out_dir: Path, num: int | None) -> None:
    """Generate a synthetic corpus (train/dev/test plus long and tail sets)."""
    from codert.data_synth import generate_dataset  # noqa: PLC0415
    from codert.stores.corpus_store import CorpusStore  # noqa: PLC0415

    config = load_data_config(spec_path, num)
    store = CorpusStore(out_dir)
    table = Table(title=f"Corpus {out_dir}")
    table.add_column("split")
    table.add_column("variant")
    table.add_column("utterances", justify="right")
    table.add_column("frames", justify="right")
    for name, (corpus, variant) in generate_dataset(config).items():
        store.write_split(name, corpus, config.task, variant)
        frames = sum(u.num_frames for u in corpus.utterances)
        table.add_row(name, variant.value, str(len(corpus)), str(frames))
    store.write_spec(config)
    console.print(table)


@main.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="Training config (YAML/JSON)")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="Run directory (checkpoints, metrics, resolved config)")
@click.option("--mode", type=click.Choice(sorted(MODES)), default=None, help="Training mode")
@click.option("--lambda", "lambda_", type=click.FloatRange(min=0.0), default=None,
              help="Distillation weight")
@click.option("--topk", type=click.IntRange(min=1), default=None,
              help="Distill only the top-k teacher logits per frame")
@click.option("--seed", type=int, default=None, help="Run seed for init and shuffling")
@click.option("--teacher-checkpoint", type=click.Path(path_type=Path), default=None,
              help="Pre-trained teacher (static mode)")
@click.option("--data", "data_dir", type=click.Path(path_type=Path), default=None,
              help="Corpus directory written by gen-data")
@click.option("--baseline-model", type=click.Choice(["student", "teacher"]), default=None,
              help="Encoder a baseline run trains")
@click.option("--max-steps", type=click.IntRange(min=0), default=None, help="Training steps")
@click.pass_context
def train(
    ctx: click.Context,
    config_path: Path | None,
    out_dir: Path | None,
    mode: str | None,
    lambda_: float | None,
    topk: int | None,
    seed: int | None,
    teacher_checkpoint: Path | None,
    data_dir: Path | None,
    baseline_model: str | None,
    max_steps: int | None,
) -> None:
    """Train a model in one of the four modes."""
    from codert.trainer import train as run_training  # noqa: PLC0415

    overrides: dict[str, Any] = {}
    distill: dict[str, Any] = {}
    if mode is not None:
        overrides["mode"] = MODES[mode].value
    if lambda_ is not None:
        distill["lambda"] = lambda_
    if topk is not None:
        distill["top_k"] = topk
    if distill:
        overrides["distill"] = distill
    for key, value in (
        ("out_dir", out_dir),
        ("teacher_checkpoint", teacher_checkpoint),
        ("data_dir", data_dir),
        ("baseline_model", baseline_model),
        ("max_steps", max_steps),
    ):
        if value is not None:
            overrides[key] = str(value) if isinstance(value, Path) else value

    config = load_config(config_path, overrides)
    if topk is not None and config.mode == TrainingMode.BASELINE:
        raise click.UsageError("--topk has no effect in baseline mode")
    if seed is not None:
        config = config.model_copy(update={"seeds": config.seeds.with_run_seed(seed)})

    setup_logging(config.out_dir / "train.log", level=ctx.obj["log_level"])
    logger.info("Training %s run into %s", config.mode.value, config.out_dir)
    result = run_training(config)

    table = Table(title=f"Run {config.out_dir}")
    table.add_column("mode")
    table.add_column("steps", justify="right")
    table.add_column("best dev WER", justify="right")
    table.add_column("checkpoint")
    best = f"{result.best_wer:.4f}" if result.history else "n/a"
    table.add_row(config.mode.value, str(result.steps), best, str(result.best_checkpoint))
    console.print(table)


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(path_type=Path))
@click.option("--data", "data_dir", required=True, type=click.Path(path_type=Path))
@click.option("--split", "split_name", default="test", show_default=True)
@click.option("--beam", type=click.IntRange(min=1), default=6, show_default=True)
@click.option("--which", type=click.Choice(["student", "teacher"]), default="student",
              show_default=True)
@click.option("--max-symbols", type=click.IntRange(min=1), default=None,
              help="Emission cap per frame (default: the checkpoint's config)")
@click.option("--hyps", "hyps_path", type=click.Path(path_type=Path), default=None,
              help="Hypotheses file (default: next to the checkpoint)")
def eval_cmd(
    checkpoint: Path,
    data_dir: Path,
    split_name: str,
    beam: int,
    which: str,
    max_symbols: int | None,
    hyps_path: Path | None,
) -> None:
    """Decode a split and report its token error rate."""
    from codert.decoding import edit_distance  # noqa: PLC0415
    from codert.stores._atomic import atomic_write  # noqa: PLC0415
    from codert.stores.checkpoint_store import load_checkpoint  # noqa: PLC0415
    from codert.stores.corpus_store import CorpusStore  # noqa: PLC0415
    from codert.trainer import evaluate, params_from_checkpoint  # noqa: PLC0415

    store = CorpusStore(data_dir)
    if split_name not in store.splits():
        raise ValidationError(f"split {split_name!r} not found under {data_dir}")
    config, params, _ = params_from_checkpoint(load_checkpoint(checkpoint))
    corpus = store.read_split(split_name)
    cap = max_symbols or config.max_symbols_per_frame
    rate, hyps = evaluate(params, corpus, which, beam, cap)

    hyps_path = hyps_path or checkpoint.parent / f"hyps_{split_name}_{which}.tsv"
    lines = ["index\tref\thyp\terrors"]
    for i, (utt, hyp) in enumerate(zip(corpus.utterances, hyps, strict=True)):
        ref_text = " ".join(map(str, utt.tokens))
        hyp_text = " ".join(map(str, hyp))
        lines.append(f"{i}\t{ref_text}\t{hyp_text}\t{edit_distance(utt.tokens, hyp)}")
    atomic_write(hyps_path, "\n".join(lines) + "\n")

    table = Table(title=f"Evaluation of {checkpoint}")
    for column in ("split", "encoder", "beam", "utterances", "WER"):
        table.add_column(column)
    table.add_row(split_name, which, str(beam), str(len(corpus)), f"{rate:.4f}")
    console.print(table)
    click.echo(f"Hypotheses: {hyps_path}")


def _require(kind: str, **values: Any) -> None:
    missing = [f"--{k.replace('_', '-')}" for k, v in values.items() if v is None or v == ()]
    if missing:
        raise click.UsageError(f"--kind {kind} requires {', '.join(missing)}")


@main.command()
@click.option("--kind", required=True,
              type=click.Choice(["entropy", "confusion", "tscurve", "pairmse"]))
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None,
              help="Model to analyse (entropy, confusion); student side for pairmse")
@click.option("--teacher-checkpoint", type=click.Path(path_type=Path), default=None,
              help="Separately trained teacher (pairmse)")
@click.option("--data", "data_dir", type=click.Path(path_type=Path), default=None)
@click.option("--split", "split_name", default=None,
              help="Corpus split (default: train for entropy, dev otherwise)")
@click.option("--which", type=click.Choice(["student", "teacher"]), default="teacher",
              show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Batch selection seed")
@click.option("--top", "top_n", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--max-utterances", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--run", "runs", multiple=True, type=click.Path(path_type=Path),
              help="Run directory or metrics file (tscurve; repeatable)")
@click.option("--window", type=click.IntRange(min=1), default=1000, show_default=True,
              help="Final-window length in steps (tscurve)")
@click.option("--gnuplot", is_flag=True, help="Also write a gnuplot script (tscurve)")
@click.option("--metrics", "metrics_path", type=click.Path(path_type=Path), default=None,
              help="Metrics log to append the paired MSE to (pairmse)")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path),
              help="Output directory (entropy) or file")
def diagnose(
    kind: str,
    checkpoint: Path | None,
    teacher_checkpoint: Path | None,
    data_dir: Path | None,
    split_name: str | None,
    which: str,
    batch_size: int,
    seed: int,
    top_n: int,
    max_utterances: int,
    runs: tuple[Path, ...],
    window: int,
    gnuplot: bool,
    metrics_path: Path | None,
    out_path: Path,
) -> None:
    """Entropy densities, confusion tables and teacher-student error curves."""
    from codert import diagnostics  # noqa: PLC0415
    from codert.data_synth import make_batches  # noqa: PLC0415
    from codert.models import SequenceBatch  # noqa: PLC0415
    from codert.stores.checkpoint_store import load_checkpoint  # noqa: PLC0415
    from codert.stores.corpus_store import CorpusStore  # noqa: PLC0415
    from codert.trainer import params_from_checkpoint  # noqa: PLC0415

    if kind == "tscurve":
        _require(kind, run=runs)
        curves = diagnostics.ts_error_curve(list(runs), window)
        written = diagnostics.write_error_curves(curves, out_path, gnuplot)
        table = Table(title=f"Teacher-student encoder MSE, last {window} steps")
        table.add_column("run")
        table.add_column("points", justify="right")
        table.add_column("final-window mean", justify="right")
        for name, mean in curves.final_means.items():
            table.add_row(name, str(len(curves.series[name])), f"{mean:.6g}")
        console.print(table)
        click.echo("Wrote " + ", ".join(str(p) for p in written))
        return

    _require(kind, checkpoint=checkpoint, data=data_dir)
    assert checkpoint is not None and data_dir is not None
    store = CorpusStore(data_dir)
    split_name = split_name or ("train" if kind == "entropy" else "dev")
    if split_name not in store.splits():
        raise ValidationError(f"split {split_name!r} not found under {data_dir}")
    corpus = store.read_split(split_name)
    ckpt = load_checkpoint(checkpoint)
    _, params, _ = params_from_checkpoint(ckpt)

    if kind == "entropy":
        hists = diagnostics.entropy_histograms(
            params, diagnostics.pick_batch(corpus, batch_size, seed), which
        )
        written = diagnostics.write_histograms_csv(hists, out_path)
        table = Table(title=f"Entropy (nats) of the {which} model")
        for column in ("component", "positions", "mean"):
            table.add_column(column)
        for component, hist in hists.items():
            table.add_row(component, str(hist.total), f"{hist.mean:.4f}")
        console.print(table)
        click.echo("Wrote " + ", ".join(str(p) for p in written))
    elif kind == "confusion":
        batch = SequenceBatch.from_utterances(corpus.utterances[:max_utterances])
        entries = diagnostics.confusion_table(params, batch, top_n, which)
        diagnostics.write_confusion_tsv(entries, out_path)
        click.echo(
            f"Top-1 agreement {diagnostics.top1_agreement(entries):.4f} "
            f"over {sum(e.frames for e in entries)} labels; wrote {out_path}"
        )
    else:
        _require(kind, teacher_checkpoint=teacher_checkpoint)
        assert teacher_checkpoint is not None
        _, teacher_params, _ = params_from_checkpoint(load_checkpoint(teacher_checkpoint))
        subset = corpus.subset(list(range(min(len(corpus), max_utterances))))
        batches = make_batches(subset, batch_size)
        mse = diagnostics.paired_encoder_mse(
            params.encoder("student"), teacher_params.encoder("teacher"), batches
        )
        target = metrics_path or out_path
        diagnostics.record_paired_mse(target, ckpt.step, mse, split_name)
        click.echo(f"Paired teacher-student encoder MSE {mse:.6g} at step {ckpt.step} -> {target}")


@main.command()
@click.option("--suite", "suites", multiple=True, default=(), help="Run only these suites")
@click.option("--seed", type=int, default=None, help="Case-generation seed")
def selfcheck(suites: tuple[str, ...], seed: int | None) -> None:
    """Run the embedded oracle suites; exit 0 iff all pass."""
    from codert.selfcheck import SEED, SUITES, run_selfcheck  # noqa: PLC0415

    unknown = sorted(set(suites) - set(SUITES))
    if unknown:
        raise click.UsageError(f"unknown suite(s): {', '.join(unknown)}")
    results = run_selfcheck(list(suites) or None, SEED if seed is None else seed)

    table = Table(title="selfcheck")
    for column in ("suite", "result", "cases", "seconds", "worst error / tolerance"):
        table.add_column(column)
    for r in results:
        status = "[green]pass[/green]" if r.passed else "[red]FAIL[/red]"
        table.add_row(r.name, status, str(r.cases), f"{r.seconds:.2f}", f"{r.worst_error:.3g}")
    console.print(table)

    failed = next((r for r in results if not r.passed), None)
    if failed is not None:
        assert failed.failing_case is not None
        click.echo(f"Failing case of {failed.name}:", err=True)
        click.echo(json.dumps(failed.failing_case), err=True)
        raise SelfCheckError(failed.name, failed.failing_case)


if __name__ == "__main__":
    main()
