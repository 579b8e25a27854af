"""Loss functions and the four training drivers: plain cross-entropy (M1),
fine-tuning on a recent fraction (M2), privileged-teacher distillation (M3),
and cosine-loss embedding prediction (M4), all with temporal validation
holdout and early stopping.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import MiniBatch, TrainingExample, make_batches
from .errors import ConfigError, DataError, NumericError
from .model import (
    ModelConfig,
    ModelParams,
    backward_embedding_output,
    backward_hidden,
    backward_softmax,
    clone_params,
    forward_embedding_output,
    forward_hidden,
    forward_softmax,
    init_params,
    validate_params_shape,
)
from .tensor import AdamConfig, adam_step, softmax_rows

log = logging.getLogger(__name__)

_PROB_FLOOR = 1e-12
_ZERO_NORM = 1e-12
# Fixed offsets keep the shuffle and dropout streams independent of each
# other and of parameter initialization.
_SHUFFLE_STRIDE = 1_000_003
_DROPOUT_OFFSET = 777_001


@dataclass
class TrainConfig:
    max_epochs: int
    batch_size: int = 512
    early_stop_patience: int = 2
    validation_fraction: float = 0.1
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 7

    def __post_init__(self) -> None:
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must be in (0, 1), got {self.validation_fraction}")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be at least 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be non-negative")


@dataclass
class DistillConfig:
    lam: float = 0.2  # weight on the teacher's soft labels
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats]
    stopped_epoch: int
    best_epoch: int
    best_val_loss: float
    wall_seconds: float

    def to_text(self) -> str:
        lines = [
            f"epoch={s.epoch} train_loss={s.train_loss:.6f} val_loss={s.val_loss:.6f} seconds={s.seconds:.3f}"
            for s in self.epochs
        ]
        lines.append(f"stopped_epoch={self.stopped_epoch}")
        lines.append(f"best_epoch={self.best_epoch}")
        lines.append(f"best_val_loss={self.best_val_loss:.6f}")
        lines.append(f"wall_seconds={self.wall_seconds:.3f}")
        return "\n".join(lines) + "\n"


def onehot(label: int, size: int) -> np.ndarray:
    """Indicator vector; position 0 is the padding slot and never a label."""
    if not 1 <= label < size:
        raise IndexError(f"label {label} outside [1, {size - 1}]")
    vec = np.zeros(size)
    vec[label] = 1.0
    return vec


def cross_entropy_loss(pred: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``label`` plus the fused softmax gradient."""
    p = pred[label]
    if p < _PROB_FLOOR:
        log.warning("clamped zero probability for label %d in cross-entropy", label)
        p = _PROB_FLOOR
    grad = pred.copy()
    grad[label] -= 1.0
    return -math.log(p), grad


def cross_entropy_batch(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch; gradient already divided by batch size."""
    batch = probs.shape[0]
    picked = probs[np.arange(batch), labels]
    if np.any(picked < _PROB_FLOOR):
        log.warning("clamped %d zero probabilities in cross-entropy", int((picked < _PROB_FLOOR).sum()))
        picked = np.maximum(picked, _PROB_FLOOR)
    loss = float(-np.log(picked).mean())
    grad = probs.copy()
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch


def tempered_probs(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of logits / T; sharpens toward the argmax as T -> 0."""
    return softmax_rows(logits / temperature)


def distillation_loss(
    student_logits: np.ndarray,
    label: int,
    teacher_probs: np.ndarray,
    cfg: DistillConfig,
) -> tuple[float, np.ndarray]:
    """Blend of hard-label cross-entropy and tempered teacher cross-entropy.

    ``teacher_probs`` must already be the teacher's distribution at
    temperature T. The soft term uses the student's tempered softmax; the
    hard term is untempered. Gradient on the student logits:

        (1 - lambda) * (p - onehot) + (lambda / T) * (p_T - q)
    """
    loss, grad = _distillation_core(
        student_logits[None, :],
        np.array([label]),
        teacher_probs[None, :],
        np.array([cfg.lam]),
        cfg.temperature,
    )
    return loss, grad[0]


def _distillation_core(
    student_logits: np.ndarray,
    labels: np.ndarray,
    teacher_probs: np.ndarray,
    lam_row: np.ndarray,
    temperature: float,
) -> tuple[float, np.ndarray]:
    batch = student_logits.shape[0]
    rows = np.arange(batch)
    p_hard = softmax_rows(student_logits)
    p_soft = softmax_rows(student_logits / temperature)

    picked = np.maximum(p_hard[rows, labels], _PROB_FLOOR)
    hard_losses = -np.log(picked)
    soft_losses = -(teacher_probs * np.log(np.maximum(p_soft, _PROB_FLOOR))).sum(axis=1)
    loss = float(((1.0 - lam_row) * hard_losses + lam_row * soft_losses).mean())

    hard_grad = p_hard.copy()
    hard_grad[rows, labels] -= 1.0
    soft_grad = (p_soft - teacher_probs) / temperature
    grad = (1.0 - lam_row)[:, None] * hard_grad + lam_row[:, None] * soft_grad
    return loss, grad


def cosine_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """1 - cosine similarity, with an explicit subgradient at pred = 0."""
    loss, grad = _cosine_core(pred[None, :], target[None, :])
    return loss, grad[0]


def _cosine_core(preds: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    t_norms = np.linalg.norm(targets, axis=1)
    if np.any(t_norms < _ZERO_NORM):
        bad = np.flatnonzero(t_norms < _ZERO_NORM)
        raise DataError(f"degenerate (zero) target embeddings at rows {bad.tolist()[:10]}")
    p_norms = np.linalg.norm(preds, axis=1)
    zero_pred = p_norms < _ZERO_NORM
    safe_p = np.where(zero_pred, 1.0, p_norms)

    sims = (preds * targets).sum(axis=1) / (safe_p * t_norms)
    losses = np.where(zero_pred, 1.0, 1.0 - sims)
    grads = -targets / (safe_p * t_norms)[:, None] + (sims / (safe_p * safe_p))[:, None] * preds
    grads[zero_pred] = -targets[zero_pred] / t_norms[zero_pred, None]
    return float(losses.mean()), grads


class _CrossEntropyObjective:
    """Softmax cross-entropy against the hard next-item label."""

    include_privileged = False

    def batch_loss(
        self, params: ModelParams, batch: MiniBatch, h_final: np.ndarray, want_grad: bool
    ) -> tuple[float, np.ndarray | None]:
        probs = forward_softmax(params, h_final)
        loss, d_logits = cross_entropy_batch(probs, batch.labels)
        if not want_grad:
            return loss, None
        return loss, backward_softmax(params, h_final, d_logits)


class _DistillObjective:
    """Hard labels blended with a frozen teacher's tempered predictions.

    The teacher scores each example's privileged (reversed future) sequence;
    examples with no future fall back to the hard label alone.
    """

    include_privileged = True

    def __init__(self, teacher: ModelParams, cfg: DistillConfig):
        self.teacher = teacher
        self.cfg = cfg

    def batch_loss(
        self, params: ModelParams, batch: MiniBatch, h_final: np.ndarray, want_grad: bool
    ) -> tuple[float, np.ndarray | None]:
        if batch.priv_inputs is None or batch.priv_mask is None:
            raise DataError("distillation needs privileged sequences in the batch")
        teacher_h, _ = forward_hidden(self.teacher, batch.priv_inputs, batch.priv_mask)
        teacher_logits = teacher_h @ self.teacher.w_out.value + self.teacher.b_out.value
        teacher_q = tempered_probs(teacher_logits, self.cfg.temperature)

        has_privileged = batch.priv_mask.sum(axis=1) > 0
        lam_row = np.where(has_privileged, self.cfg.lam, 0.0)

        logits = h_final @ params.w_out.value + params.b_out.value
        loss, d_logits = _distillation_core(
            logits, batch.labels, teacher_q, lam_row, self.cfg.temperature
        )
        if not want_grad:
            return loss, None
        return loss, backward_softmax(params, h_final, d_logits / len(batch))


class _CosineObjective:
    """Cosine loss between the predicted vector and the frozen label embedding."""

    include_privileged = False

    def __init__(self, target_embeddings: np.ndarray):
        self.targets = target_embeddings

    def batch_loss(
        self, params: ModelParams, batch: MiniBatch, h_final: np.ndarray, want_grad: bool
    ) -> tuple[float, np.ndarray | None]:
        preds, cache = forward_embedding_output(params, h_final)
        loss, d_pred = _cosine_core(preds, self.targets[batch.labels])
        if not want_grad:
            return loss, None
        return loss, backward_embedding_output(params, cache, d_pred / len(batch))


def _split_validation(
    examples: list[TrainingExample], fraction: float
) -> tuple[list[TrainingExample], list[TrainingExample]]:
    """Temporal holdout: the most recent ``fraction`` of time-sorted examples."""
    ordered = sorted(examples, key=lambda ex: ex.session_start)
    n_val = max(1, int(fraction * len(ordered)))
    if len(ordered) - n_val < 1:
        raise ConfigError(f"too few examples ({len(ordered)}) for a validation split")
    return ordered[: len(ordered) - n_val], ordered[len(ordered) - n_val :]


def _mean_loss(
    params: ModelParams,
    config: ModelConfig,
    examples: list[TrainingExample],
    tcfg: TrainConfig,
    objective,
) -> float:
    total = 0.0
    for batch in make_batches(
        examples, tcfg.batch_size, config.window, tcfg.seed, objective.include_privileged
    ):
        h_final, _ = forward_hidden(params, batch.inputs, batch.mask)
        loss, _ = objective.batch_loss(params, batch, h_final, want_grad=False)
        total += loss * len(batch)
    return total / len(examples)


def _train_engine(
    params: ModelParams,
    config: ModelConfig,
    examples: list[TrainingExample],
    tcfg: TrainConfig,
    objective,
    frozen: frozenset[str] = frozenset(),
) -> TrainReport:
    """Shared mini-batch Adam loop with temporal validation early stopping.

    Mutates ``params``; on return they hold the best-validation epoch values.
    """
    started = time.perf_counter()
    if tcfg.max_epochs == 0:
        return TrainReport([], 0, 0, math.nan, time.perf_counter() - started)

    train_ex, val_ex = _split_validation(examples, tcfg.validation_fraction)
    adam = replace(tcfg.adam, step_count=0)
    dropout_rng = np.random.default_rng(tcfg.seed + _DROPOUT_OFFSET)
    updatable = [p for p in params.trainable() if p.name not in frozen]

    stats: list[EpochStats] = []
    best_values = params.copy_values()
    best_val = math.inf
    best_epoch = 0
    epochs_without_improvement = 0
    stopped = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        epoch_start = time.perf_counter()
        total = 0.0
        shuffle_seed = tcfg.seed * _SHUFFLE_STRIDE + epoch
        for batch in make_batches(
            train_ex, tcfg.batch_size, config.window, shuffle_seed, objective.include_privileged
        ):
            params.zero_grads()
            h_final, cache = forward_hidden(
                params, batch.inputs, batch.mask, config.embed_dropout_rate, dropout_rng
            )
            loss, d_h = objective.batch_loss(params, batch, h_final, want_grad=True)
            if not math.isfinite(loss):
                raise NumericError(f"training diverged: loss {loss} at epoch {epoch}")
            backward_hidden(params, cache, d_h)
            adam.step_count += 1
            for p in updatable:
                adam_step(p, adam)
            total += loss * len(batch)
        train_loss = total / len(train_ex)
        val_loss = _mean_loss(params, config, val_ex, tcfg, objective)
        stats.append(EpochStats(epoch, train_loss, val_loss, time.perf_counter() - epoch_start))
        stopped = epoch
        if val_loss < best_val:
            best_val = val_loss
            best_values = params.copy_values()
            best_epoch = epoch
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= tcfg.early_stop_patience:
                break

    params.load_values(best_values)
    return TrainReport(stats, stopped, best_epoch, best_val, time.perf_counter() - started)


def train_m1(
    examples: list[TrainingExample], config: ModelConfig, tcfg: TrainConfig
) -> tuple[ModelParams, TrainReport]:
    """Softmax model with prefix examples and embedding dropout."""
    params = init_params(config, tcfg.seed)
    report = _train_engine(params, config, examples, tcfg, _CrossEntropyObjective())
    return params, report


def finetune_m2(
    base: ModelParams,
    recent_examples: list[TrainingExample],
    config: ModelConfig,
    tcfg: TrainConfig,
) -> tuple[ModelParams, TrainReport]:
    """Re-train a copy of ``base`` on a recent subset; Adam state starts fresh."""
    validate_params_shape(base, config)
    params = clone_params(base)
    report = _train_engine(params, config, recent_examples, tcfg, _CrossEntropyObjective())
    return params, report


def train_m3(
    examples: list[TrainingExample],
    config: ModelConfig,
    tcfg: TrainConfig,
    dcfg: DistillConfig,
) -> tuple[ModelParams, ModelParams, TrainReport, TrainReport]:
    """Teacher on reversed-future sequences, then a distilled student.

    Returns (teacher, student, teacher report, student report). The student
    reuses the M1 seed streams exactly, so lambda = 0 reproduces train_m1
    bit for bit; the teacher trains on seed + 1.
    """
    teacher_examples = [
        TrainingExample(ex.privileged, ex.label, (), ex.session_start)
        for ex in examples
        if ex.privileged
    ]
    if not teacher_examples:
        raise DataError("no examples carry a privileged sequence; nothing to teach from")
    teacher_tcfg = replace(tcfg, seed=tcfg.seed + 1)
    teacher, teacher_report = train_m1(teacher_examples, config, teacher_tcfg)

    student = init_params(config, tcfg.seed)
    student_report = _train_engine(
        student, config, examples, tcfg, _DistillObjective(teacher, dcfg)
    )
    return teacher, student, teacher_report, student_report


def train_m4(
    examples: list[TrainingExample],
    config: ModelConfig,
    target_embeddings: np.ndarray,
    tcfg: TrainConfig,
    train_input_embedding: bool = True,
) -> tuple[ModelParams, TrainReport]:
    """Embedding-output model trained with cosine loss against frozen targets.

    The input embedding table starts from the same frozen matrix and trains
    by default; pass ``train_input_embedding=False`` to keep it pinned.
    """
    expected = (config.vocab_size_with_pad, config.embed_dim)
    if target_embeddings.shape != expected:
        raise ConfigError(
            f"target embedding shape {target_embeddings.shape} does not match model {expected}"
        )
    norms = np.linalg.norm(target_embeddings[1:], axis=1)
    if np.any(norms < _ZERO_NORM):
        bad = (np.flatnonzero(norms < _ZERO_NORM) + 1).tolist()
        raise DataError(f"degenerate target embeddings for items {bad[:10]}")

    params = init_params(config, tcfg.seed)
    params.embedding.value[...] = target_embeddings
    params.embedding.value[0, :] = 0.0
    params.target_embedding = target_embeddings.copy()

    frozen = frozenset() if train_input_embedding else frozenset({"embedding"})
    report = _train_engine(
        params, config, examples, tcfg, _CosineObjective(params.target_embedding), frozen
    )
    return params, report
