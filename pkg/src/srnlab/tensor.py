"""Dense float64 building blocks: checked matmul, stable softmax, Adam,
and a central-difference gradient checker.

Matrices are plain 2-D numpy arrays (row-major float64). Training math is
64-bit throughout; checkpoints narrow to 32-bit on save.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

Matrix = np.ndarray


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit shape check."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(x: Matrix) -> Matrix:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0  # shared across parameters; +1 per optimizer step


@dataclass
class Parameter:
    """A trainable matrix with its gradient and Adam moment buffers."""

    name: str
    value: Matrix
    grad: Matrix = field(repr=False, default=None)  # type: ignore[assignment]
    adam_m: Matrix = field(repr=False, default=None)  # type: ignore[assignment]
    adam_v: Matrix = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.value.ndim != 2:
            raise ShapeError(f"parameter {self.name} must be 2-D, got {self.value.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def reset_optimizer_state(self) -> None:
        self.adam_m[...] = 0.0
        self.adam_v[...] = 0.0


def adam_step(p: Parameter, cfg: AdamConfig) -> None:
    """One Adam update on ``p.value`` from ``p.grad``.

    ``cfg.step_count`` must already be incremented for this step (t >= 1).
    The gradient itself is left untouched; the caller zeroes it.
    """
    if cfg.step_count < 1:
        raise NumericError("adam_step called with step_count < 1; increment it first")
    if not np.all(np.isfinite(p.grad)):
        raise NumericError(f"non-finite gradient entries in parameter {p.name!r}")
    t = cfg.step_count
    p.adam_m = cfg.beta1 * p.adam_m + (1.0 - cfg.beta1) * p.grad
    p.adam_v = cfg.beta2 * p.adam_v + (1.0 - cfg.beta2) * (p.grad * p.grad)
    m_hat = p.adam_m / (1.0 - cfg.beta1**t)
    v_hat = p.adam_v / (1.0 - cfg.beta2**t)
    p.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def finite_difference_check(
    loss_fn,
    params: list[Parameter],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn()`` must be deterministic, return a scalar loss computed from
    the current ``param.value`` contents, and fill every ``param.grad`` as a
    side effect. Returns the max over checked coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    loss_fn()
    analytic = [p.grad.copy() for p in params]

    coords = [
        (pi, i, j)
        for pi, p in enumerate(params)
        for i in range(p.value.shape[0])
        for j in range(p.value.shape[1])
    ]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in picked]

    worst = 0.0
    for pi, i, j in coords:
        value = params[pi].value
        saved = value[i, j]
        value[i, j] = saved + eps
        loss_plus = loss_fn()
        value[i, j] = saved - eps
        loss_minus = loss_fn()
        value[i, j] = saved
        numeric = (loss_plus - loss_minus) / (2.0 * eps)
        a = analytic[pi][i, j]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
