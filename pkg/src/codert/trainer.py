"""Optimization loop: learning-rate schedule, Adam, mode dispatch, checkpoints."""

from __future__ import annotations

import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from codert.config import LrSchedule, OptimizerConfig, TrainConfig, TrainingMode
from codert.data_synth import generate_dataset, make_batches
from codert.decoding import transcribe, wer
from codert.distillation import (
    StepResult,
    baseline_step,
    colearn_step,
    static_teacher_step,
    tandem_step,
)
from codert.exceptions import CheckpointError, DivergenceError, ShapeError, ValidationError
from codert.logging import get_logger, timed
from codert.models import Corpus, EvalRecord, SequenceBatch, StepRecord
from codert.network import (
    SHARED_DECODER,
    TEACHER_DECODER,
    ParamDict,
    ParamSet,
    RnntParams,
    count_params,
    init_params,
    param_shapes,
)
from codert.numerics import FloatArray
from codert.stores._atomic import atomic_write
from codert.stores.checkpoint_store import Checkpoint, load_checkpoint, save_checkpoint
from codert.stores.corpus_store import CorpusStore
from codert.stores.metrics_store import MetricsStore

logger = get_logger(__name__)

ADAM_M = "adam.m/"
ADAM_V = "adam.v/"
BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"


def lr_at_step(schedule: LrSchedule, step: float) -> float:
    """Learning rate at ``step``: linear warm-up, hold, then exponential decay.

    Beyond ``decay_end_step`` the final rate is returned unchanged.
    """
    if step < 0:
        raise ValidationError(f"step must be >= 0, got {step}")
    if step < schedule.warmup_steps:
        frac = step / schedule.warmup_steps
        return schedule.warmup_start + (schedule.peak - schedule.warmup_start) * frac
    if step <= schedule.hold_end:
        return schedule.peak
    if step >= schedule.decay_end_step:
        return schedule.final_lr
    progress = (step - schedule.hold_end) / (schedule.decay_end_step - schedule.hold_end)
    return float(schedule.peak * (schedule.final_lr / schedule.peak) ** progress)


@dataclass
class AdamState:
    """First/second moment estimates keyed like the flat parameter map."""

    m: dict[str, FloatArray] = field(default_factory=dict)
    v: dict[str, FloatArray] = field(default_factory=dict)
    t: int = 0


def global_norm(grads: ParamDict) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def optimizer_step(
    params: ParamDict,
    grads: ParamDict,
    state: AdamState,
    lr: float,
    config: OptimizerConfig | None = None,
) -> tuple[ParamDict, AdamState, float]:
    """One Adam update with global-norm clipping applied first.

    Only entries present in ``grads`` are updated; the rest are passed through.

    Returns:
        ``(new_params, state, pre_clip_grad_norm)``.

    Raises:
        DivergenceError: If any gradient is NaN or infinite.
        ShapeError: If a gradient's shape differs from its parameter.
    """
    cfg = config or OptimizerConfig()
    for name, g in grads.items():
        if name not in params or np.shape(params[name]) != np.shape(g):
            raise ShapeError(f"gradient {name!r} does not match a parameter")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("diverged", step=state.t)
    norm = global_norm(grads)
    scale = cfg.clip_norm / norm if norm > cfg.clip_norm else 1.0

    state.t += 1
    bias1 = 1.0 - cfg.beta1**state.t
    bias2 = 1.0 - cfg.beta2**state.t
    updated = dict(params)
    for name, g in grads.items():
        g64 = np.asarray(g, dtype=np.float64) * scale
        m = cfg.beta1 * state.m.get(name, np.zeros_like(g64)) + (1.0 - cfg.beta1) * g64
        v = cfg.beta2 * state.v.get(name, np.zeros_like(g64)) + (1.0 - cfg.beta2) * g64**2
        state.m[name], state.v[name] = m, v
        p = np.asarray(params[name], dtype=np.float64)
        step = lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
        updated[name] = (p - step).astype(np.asarray(params[name]).dtype)
    return updated, state, norm


def _derived_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def build_params(config: TrainConfig, teacher: RnntParams | None = None) -> RnntParams:
    """Initialize the parameter groups the configured mode trains.

    Encoders use stream 0 and decoders stream 1 of their seed, so the student
    side of every mode starts from the same weights.
    """
    seeds = config.seeds
    student_side = (config.student_encoder, seeds.init_student)
    teacher_side = (config.teacher_encoder, seeds.init_teacher)
    groups: dict[str, ParamSet] = {}
    mode = config.mode
    if mode == TrainingMode.BASELINE:
        enc_cfg, seed = student_side if config.baseline_model == "student" else teacher_side
        groups[f"{config.baseline_model}_encoder"] = init_params(enc_cfg, _derived_seed(seed, 0))
        groups[SHARED_DECODER] = init_params(config.decoder, _derived_seed(seed, 1))
        return RnntParams(groups)

    groups["student_encoder"] = init_params(
        config.student_encoder, _derived_seed(seeds.init_student, 0)
    )
    groups[SHARED_DECODER] = init_params(config.decoder, _derived_seed(seeds.init_student, 1))
    if mode == TrainingMode.STATIC:
        if teacher is None:
            raise ValidationError("static teacher mode needs a loaded teacher")
        groups["teacher_encoder"] = teacher.encoder("teacher")
        groups[TEACHER_DECODER] = teacher.decoder_for("teacher")
        return RnntParams(groups)

    groups["teacher_encoder"] = init_params(
        config.teacher_encoder, _derived_seed(seeds.init_teacher, 0)
    )
    if mode == TrainingMode.SEPARATE:
        groups[TEACHER_DECODER] = init_params(config.decoder, _derived_seed(seeds.init_teacher, 1))
    return RnntParams(groups)


def trainable_groups(config: TrainConfig, params: RnntParams) -> list[str]:
    if config.mode == TrainingMode.STATIC:
        return ["student_encoder", SHARED_DECODER]
    return list(params.groups)


def _flatten(grads: dict[str, ParamDict]) -> ParamDict:
    return {f"{g}/{k}": v for g, group in grads.items() for k, v in group.items()}


def _unflatten_into(params: RnntParams, flat: ParamDict) -> None:
    for key, value in flat.items():
        group, name = key.split("/", 1)
        params.groups[group].tensors[name] = value


def run_step(
    config: TrainConfig,
    params: RnntParams,
    batch: SequenceBatch,
    dropout_rng: np.random.Generator | None = None,
) -> StepResult:
    """Forward + backward for the configured mode."""
    mode = config.mode
    if mode == TrainingMode.BASELINE:
        return baseline_step(params, batch, config.baseline_model, dropout_rng)
    if mode == TrainingMode.COLEARN:
        return colearn_step(params, batch, config.distill, dropout_rng)
    if mode == TrainingMode.STATIC:
        return static_teacher_step(params, params, batch, config.distill, dropout_rng)
    return tandem_step(params, batch, config.distill, dropout_rng)


def make_checkpoint(
    config: TrainConfig, params: RnntParams, step: int, state: AdamState | None = None
) -> Checkpoint:
    tensors = {k: np.asarray(v, dtype=np.float32) for k, v in params.flat().items()}
    if state is not None:
        for name in sorted(state.m):
            tensors[ADAM_M + name] = state.m[name].astype(np.float32)
            tensors[ADAM_V + name] = state.v[name].astype(np.float32)
    return Checkpoint(
        config_json=config.model_dump_json(by_alias=True), step=step, tensors=tensors
    )


def params_from_checkpoint(ckpt: Checkpoint) -> tuple[TrainConfig, RnntParams, AdamState]:
    """Rebuild the config, parameter groups and optimizer state of a checkpoint.

    Raises:
        CheckpointError: If a tensor is missing or has the wrong shape.
    """
    try:
        config = TrainConfig.model_validate_json(ckpt.config_json)
    except Exception as e:
        raise CheckpointError(f"checkpoint config is invalid: {e}") from e
    group_configs = {
        "student_encoder": config.student_encoder,
        "teacher_encoder": config.teacher_encoder,
        SHARED_DECODER: config.decoder,
        TEACHER_DECODER: config.decoder,
    }
    present = {
        k.split("/", 1)[0] for k in ckpt.tensors if not k.startswith((ADAM_M, ADAM_V))
    }
    groups: dict[str, ParamSet] = {}
    for group in sorted(present):
        if group not in group_configs:
            raise CheckpointError(f"unknown parameter group {group!r} in checkpoint")
        cfg = group_configs[group]
        tensors = {}
        for name, shape in param_shapes(cfg):
            key = f"{group}/{name}"
            if key not in ckpt.tensors:
                raise CheckpointError(f"checkpoint is missing tensor {key!r}")
            if ckpt.tensors[key].shape != shape:
                raise CheckpointError(
                    f"tensor {key!r} has shape {ckpt.tensors[key].shape}, config implies {shape}"
                )
            tensors[name] = ckpt.tensors[key]
        groups[group] = ParamSet(cfg, tensors)
    state = AdamState(t=ckpt.step)
    for key, value in ckpt.tensors.items():
        if key.startswith(ADAM_M):
            state.m[key.removeprefix(ADAM_M)] = value.astype(np.float64)
        elif key.startswith(ADAM_V):
            state.v[key.removeprefix(ADAM_V)] = value.astype(np.float64)
    return config, RnntParams(groups), state


def load_teacher(path: Path) -> tuple[TrainConfig, RnntParams]:
    """Load a frozen teacher: its encoder and the decoder it was trained with."""
    config, params, _ = params_from_checkpoint(load_checkpoint(path))
    if "teacher_encoder" not in params.groups:
        raise CheckpointError(f"{path} holds no teacher encoder")
    return config, RnntParams(
        {
            "teacher_encoder": params.encoder("teacher"),
            TEACHER_DECODER: params.decoder_for("teacher"),
        }
    )


def load_corpora(config: TrainConfig) -> tuple[Corpus, Corpus]:
    """Train and dev corpora: from ``data_dir`` when set, else generated.

    Generated corpora use ``seeds.data`` as the task seed, so they equal the
    splits ``gen-data`` writes for a task with that seed.
    """
    if config.data_dir is not None:
        store = CorpusStore(config.data_dir)
        return store.read_split("train"), store.read_split("dev")
    task = config.data.task.model_copy(update={"seed": config.seeds.data})
    data = config.data.model_copy(
        update={"task": task, "long_utterances": 0, "tail_utterances": 0}
    )
    splits = generate_dataset(data)
    return splits["train"][0], splits["dev"][0]


def _batch_stream(config: TrainConfig, corpus: Corpus) -> Iterator[SequenceBatch]:
    epoch = 0
    while True:
        shuffle_seed = _derived_seed(config.seeds.shuffle, epoch)
        yield from make_batches(corpus, config.batch_size, shuffle_seed)
        epoch += 1


def evaluate(
    params: RnntParams,
    corpus: Corpus,
    which: str,
    beam: int,
    max_symbols: int,
    limit: int | None = None,
) -> tuple[float, list[list[int]]]:
    """Token error rate of one encoder on (a prefix of) a corpus."""
    utterances = corpus.utterances[:limit] if limit else corpus.utterances
    hyps = transcribe(params, [u.frames for u in utterances], which, beam, max_symbols)
    return wer([u.tokens for u in utterances], hyps), hyps


def _group_norm(grads: dict[str, ParamDict], *groups: str) -> float:
    return global_norm({f"{g}/{k}": v for g in groups if g in grads for k, v in grads[g].items()})


@dataclass
class TrainResult:
    """Outcome of :func:`train`."""

    params: RnntParams
    steps: int
    last_checkpoint: Path
    best_checkpoint: Path
    best_wer: float
    history: list[EvalRecord] = field(default_factory=list)


def train(
    config: TrainConfig,
    corpora: tuple[Corpus, Corpus] | None = None,
) -> TrainResult:
    """Run the configured training mode to ``max_steps``.

    Writes ``config.json``, ``metrics.jsonl``, ``best.ckpt`` (lowest dev WER of
    the primary model) and ``last.ckpt`` under ``config.out_dir``.

    Raises:
        DivergenceError: If a gradient becomes non-finite; metrics written so
            far are kept.
    """
    out_dir = config.out_dir
    teacher: RnntParams | None = None
    if config.mode == TrainingMode.STATIC:
        assert config.teacher_checkpoint is not None
        teacher_config, teacher = load_teacher(config.teacher_checkpoint)
        config = config.model_copy(update={"teacher_encoder": teacher_config.teacher_encoder})
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(out_dir / "config.json", config.model_dump_json(indent=2, by_alias=True))

    train_set, dev_set = corpora if corpora is not None else load_corpora(config)
    params = build_params(config, teacher)
    primary = config.baseline_model if config.mode == TrainingMode.BASELINE else "student"
    has_teacher = config.mode != TrainingMode.BASELINE
    _log_sizes(params)

    metrics = MetricsStore(config.metrics_path)
    metrics.reset()
    state = AdamState()
    trainable = trainable_groups(config, params)
    dropout_rng = np.random.Generator(
        np.random.PCG64(_derived_seed(config.seeds.shuffle, 10_000))
    )
    best_path, last_path = out_dir / BEST_CHECKPOINT, out_dir / LAST_CHECKPOINT
    history: list[EvalRecord] = []
    best_wer = math.inf

    def run_eval(step: int) -> None:
        nonlocal best_wer
        if len(dev_set) == 0:
            return
        with timed(logger, f"dev evaluation at step {step}"):
            primary_wer, _ = evaluate(
                params, dev_set, primary, config.eval_beam, config.max_symbols_per_frame,
                config.eval_max_utterances,
            )
            teacher_wer: float | None = None
            if has_teacher:
                teacher_wer, _ = evaluate(
                    params, dev_set, "teacher", config.eval_beam, config.max_symbols_per_frame,
                    config.eval_max_utterances,
                )
        if primary == "teacher":
            record = EvalRecord(
                step=step, split="dev", wer_teacher=primary_wer, beam=config.eval_beam
            )
        else:
            record = EvalRecord(
                step=step, split="dev", wer_student=primary_wer, wer_teacher=teacher_wer,
                beam=config.eval_beam,
            )
        metrics.append(record)
        history.append(record)
        logger.info(
            "step %d: dev WER %s=%.4f%s", step, primary, primary_wer,
            f" teacher={teacher_wer:.4f}" if teacher_wer is not None else "",
        )
        if primary_wer < best_wer:
            best_wer = primary_wer
            save_checkpoint(best_path, make_checkpoint(config, params, step, state))
            logger.info("New best dev WER %.4f at step %d -> %s", primary_wer, step, best_path)

    run_eval(0)
    if config.max_steps > 0 and len(train_set) == 0:
        raise ValidationError("training corpus is empty")
    batches = _batch_stream(config, train_set)
    for step in range(config.max_steps):
        batch = next(batches)
        lr = lr_at_step(config.lr_schedule, step)
        result = run_step(config, params, batch, dropout_rng)
        flat_grads = _flatten({g: result.grads[g] for g in trainable if g in result.grads})
        try:
            new_flat, state, _ = optimizer_step(
                params.flat(), flat_grads, state, lr, config.optimizer
            )
        except DivergenceError as e:
            e.step = step
            logger.error("Training diverged at step %d; metrics kept in %s", step, metrics.path)
            raise
        _unflatten_into(params, {k: new_flat[k] for k in flat_grads})
        bundle = result.bundle
        metrics.append(
            StepRecord(
                step=step,
                lr=lr,
                loss_rnnt_s=bundle.rnnt_student,
                loss_rnnt_t=bundle.rnnt_teacher,
                loss_distill=bundle.distill,
                loss_total=bundle.total,
                grad_norm_s=_group_norm(result.grads, "student_encoder"),
                grad_norm_t=_group_norm(result.grads, "teacher_encoder"),
                grad_norm_dec=_group_norm(result.grads, SHARED_DECODER, TEACHER_DECODER),
                ts_encoder_mse=result.ts_encoder_mse,
            )
        )
        if (step + 1) % config.runtime.log_every == 0:
            logger.info(
                "step %d/%d lr=%.2e total=%.4f rnnt_s=%.4f rnnt_t=%.4f distill=%.4f",
                step + 1, config.max_steps, lr, bundle.total, bundle.rnnt_student,
                bundle.rnnt_teacher, bundle.distill,
            )
        if (step + 1) % config.eval_every == 0 and step + 1 < config.max_steps:
            run_eval(step + 1)

    if config.max_steps > 0:
        run_eval(config.max_steps)
    save_checkpoint(last_path, make_checkpoint(config, params, config.max_steps, state))
    if not best_path.exists():
        save_checkpoint(best_path, make_checkpoint(config, params, config.max_steps, state))
    logger.info("Training finished after %d steps; checkpoints in %s", config.max_steps, out_dir)
    return TrainResult(params, config.max_steps, last_path, best_path, best_wer, history)


def _log_sizes(params: RnntParams) -> None:
    sizes = {name: count_params(ps) for name, ps in params.groups.items()}
    for name, size in sizes.items():
        logger.info("%s: %d parameters", name, size)
    if "student_encoder" in sizes and "teacher_encoder" in sizes:
        ratio = sizes["student_encoder"] / sizes["teacher_encoder"]
        logger.info("student/teacher encoder size ratio: %.3f", ratio)
