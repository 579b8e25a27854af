"""The network: trainable item embeddings, one GRU layer, and either a
softmax classification head or a dense+linear embedding-output head, with
hand-written forward and backward passes.

GRU convention (per step t, h_0 = 0):

    z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
    r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
    c_t = tanh(x_t W_h + (r_t * h_{t-1}) U_h + b_h)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t        where mask = 1
    h_t = h_{t-1}                                 where mask = 0 (padding)
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Matrix, Parameter, sigmoid, softmax_rows

SOFTMAX_HEAD = "softmax"
EMBEDDING_HEAD = "embedding"


@dataclass
class ModelConfig:
    vocab_size_with_pad: int  # m + 1; index 0 is padding
    embed_dim: int = 50
    gru_units: int = 100
    head: str = SOFTMAX_HEAD
    hidden_dense_units: int | None = None  # embedding head only; default 2 * gru_units
    window: int = 19
    embed_dropout_rate: float = 0.25

    def __post_init__(self) -> None:
        if self.head not in (SOFTMAX_HEAD, EMBEDDING_HEAD):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.vocab_size_with_pad < 2:
            raise ConfigError("vocabulary must contain at least one real item")
        if not 0.0 <= self.embed_dropout_rate < 1.0:
            raise ConfigError(f"embed_dropout_rate must be in [0, 1), got {self.embed_dropout_rate}")
        if self.head == EMBEDDING_HEAD:
            if self.hidden_dense_units is None:
                self.hidden_dense_units = 2 * self.gru_units
        elif self.hidden_dense_units is not None:
            raise ConfigError("hidden_dense_units only applies to the embedding head")


@dataclass
class ModelParams:
    embedding: Parameter  # (m+1, D); row 0 is padding and never trains
    w_z: Parameter
    w_r: Parameter
    w_h: Parameter
    u_z: Parameter
    u_r: Parameter
    u_h: Parameter
    b_z: Parameter
    b_r: Parameter
    b_h: Parameter
    w_out: Parameter | None = None  # softmax head
    b_out: Parameter | None = None
    w_hid: Parameter | None = None  # embedding head
    w_emb: Parameter | None = None
    b_emb: Parameter | None = None
    # Frozen target item embeddings for the embedding head; carried in
    # checkpoints so cosine ranking works standalone. Not trainable.
    target_embedding: Matrix | None = None

    def trainable(self) -> list[Parameter]:
        fixed = [
            self.embedding,
            self.w_z, self.w_r, self.w_h,
            self.u_z, self.u_r, self.u_h,
            self.b_z, self.b_r, self.b_h,
        ]
        head = [self.w_out, self.b_out, self.w_hid, self.w_emb, self.b_emb]
        return fixed + [p for p in head if p is not None]

    def zero_grads(self) -> None:
        for p in self.trainable():
            p.zero_grad()

    def copy_values(self) -> dict[str, Matrix]:
        return {p.name: p.value.copy() for p in self.trainable()}

    def load_values(self, values: dict[str, Matrix]) -> None:
        for p in self.trainable():
            p.value[...] = values[p.name]


def _shapes(config: ModelConfig) -> list[tuple[str, int, int]]:
    v, d, h = config.vocab_size_with_pad, config.embed_dim, config.gru_units
    shapes = [
        ("embedding", v, d),
        ("w_z", d, h), ("w_r", d, h), ("w_h", d, h),
        ("u_z", h, h), ("u_r", h, h), ("u_h", h, h),
        ("b_z", 1, h), ("b_r", 1, h), ("b_h", 1, h),
    ]
    if config.head == SOFTMAX_HEAD:
        shapes += [("w_out", h, v), ("b_out", 1, v)]
    else:
        hd = config.hidden_dense_units
        shapes += [("w_hid", h, hd), ("w_emb", hd, d), ("b_emb", 1, d)]
    return shapes


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Uniform fan-based weight init, zero biases, zero padding embedding row."""
    rng = np.random.default_rng(seed)
    built: dict[str, Parameter] = {}
    for name, rows, cols in _shapes(config):
        if name.startswith("b_"):
            value = np.zeros((rows, cols))
        else:
            scale = np.sqrt(6.0 / (rows + cols))
            value = rng.uniform(-scale, scale, size=(rows, cols))
        built[name] = Parameter(name, value)
    built["embedding"].value[0, :] = 0.0
    return ModelParams(**built)


def count_params(config: ModelConfig) -> int:
    """Exact trainable scalar count for a config."""
    return sum(rows * cols for _, rows, cols in _shapes(config))


def validate_params_shape(params: ModelParams, config: ModelConfig) -> None:
    """Raise CheckpointError if parameters do not fit the config exactly."""
    from .errors import CheckpointError

    by_name = {p.name: p for p in params.trainable()}
    expected = _shapes(config)
    if set(by_name) != {name for name, _, _ in expected}:
        raise CheckpointError(
            f"parameter set {sorted(by_name)} does not match head {config.head!r}"
        )
    for name, rows, cols in expected:
        if by_name[name].value.shape != (rows, cols):
            raise CheckpointError(
                f"parameter {name} has shape {by_name[name].value.shape}, config implies ({rows}, {cols})"
            )


def apply_embedding_dropout(
    embedded: np.ndarray,
    mask: np.ndarray,
    rate: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Zero whole timestep embedding vectors with probability ``rate``.

    Survivors are scaled by 1/(1-rate) so expectations match evaluation.
    Padding positions are zero vectors already, so they pass through
    unchanged. Returns (dropped batch, per-timestep multiplier) so the
    backward pass can reuse the multiplier.
    """
    if rate == 0.0:
        multiplier = np.ones(embedded.shape[:2])
        return embedded, multiplier
    keep = rng.random(embedded.shape[:2]) >= rate
    multiplier = keep / (1.0 - rate)
    return embedded * multiplier[:, :, None], multiplier


@dataclass
class HiddenStateTrace:
    """Per-step GRU activations; everything the backward pass needs."""

    z: np.ndarray  # (window, batch, H)
    r: np.ndarray
    cand: np.ndarray
    h: np.ndarray
    inputs: np.ndarray  # embedded inputs after dropout, (batch, window, D)
    mask: np.ndarray  # (batch, window)

    @property
    def final_h(self) -> np.ndarray:
        return self.h[-1]


def gru_forward(params: ModelParams, embedded: np.ndarray, mask: np.ndarray) -> HiddenStateTrace:
    batch, window, _ = embedded.shape
    hdim = params.u_z.value.shape[0]
    z = np.zeros((window, batch, hdim))
    r = np.zeros((window, batch, hdim))
    cand = np.zeros((window, batch, hdim))
    h = np.zeros((window, batch, hdim))
    h_prev = np.zeros((batch, hdim))
    for t in range(window):
        x_t = embedded[:, t, :]
        z[t] = sigmoid(x_t @ params.w_z.value + h_prev @ params.u_z.value + params.b_z.value)
        r[t] = sigmoid(x_t @ params.w_r.value + h_prev @ params.u_r.value + params.b_r.value)
        cand[t] = np.tanh(
            x_t @ params.w_h.value + (r[t] * h_prev) @ params.u_h.value + params.b_h.value
        )
        updated = (1.0 - z[t]) * h_prev + z[t] * cand[t]
        m = mask[:, t : t + 1]
        h[t] = m * updated + (1.0 - m) * h_prev
        h_prev = h[t]
    return HiddenStateTrace(z, r, cand, h, embedded, mask)


def gru_backward(params: ModelParams, trace: HiddenStateTrace, d_final: np.ndarray) -> np.ndarray:
    """Backpropagate through time; accumulates into the GRU parameter grads
    and returns the gradient on the embedded inputs (batch, window, D).
    """
    window = trace.h.shape[0]
    batch, hdim = d_final.shape
    d_embedded = np.zeros_like(trace.inputs)
    dh = d_final
    for t in range(window - 1, -1, -1):
        h_prev = trace.h[t - 1] if t > 0 else np.zeros((batch, hdim))
        z, r, cand = trace.z[t], trace.r[t], trace.cand[t]
        x_t = trace.inputs[:, t, :]
        m = trace.mask[:, t : t + 1]

        dh_upd = dh * m
        dh_prev = dh * (1.0 - m)

        dz = dh_upd * (cand - h_prev)
        dcand = dh_upd * z
        dh_prev = dh_prev + dh_upd * (1.0 - z)

        da_c = dcand * (1.0 - cand * cand)
        params.w_h.grad += x_t.T @ da_c
        params.b_h.grad += da_c.sum(axis=0, keepdims=True)
        rh = r * h_prev
        params.u_h.grad += rh.T @ da_c
        d_rh = da_c @ params.u_h.value.T
        dr = d_rh * h_prev
        dh_prev = dh_prev + d_rh * r
        dx = da_c @ params.w_h.value.T

        da_z = dz * z * (1.0 - z)
        params.w_z.grad += x_t.T @ da_z
        params.u_z.grad += h_prev.T @ da_z
        params.b_z.grad += da_z.sum(axis=0, keepdims=True)
        dx += da_z @ params.w_z.value.T
        dh_prev = dh_prev + da_z @ params.u_z.value.T

        da_r = dr * r * (1.0 - r)
        params.w_r.grad += x_t.T @ da_r
        params.u_r.grad += h_prev.T @ da_r
        params.b_r.grad += da_r.sum(axis=0, keepdims=True)
        dx += da_r @ params.w_r.value.T
        dh_prev = dh_prev + da_r @ params.u_r.value.T

        d_embedded[:, t, :] = dx
        dh = dh_prev
    return d_embedded


@dataclass
class HiddenCache:
    trace: HiddenStateTrace
    inputs: np.ndarray  # (batch, window) item indices
    dropout_multiplier: np.ndarray  # (batch, window)


def forward_hidden(
    params: ModelParams,
    inputs: np.ndarray,
    mask: np.ndarray,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, HiddenCache]:
    """Embedding lookup (+ optional training dropout) then the GRU pass."""
    embedded = params.embedding.value[inputs]
    if dropout_rate > 0.0:
        if rng is None:
            raise ConfigError("embedding dropout needs an RNG")
        embedded, multiplier = apply_embedding_dropout(embedded, mask, dropout_rate, rng)
    else:
        multiplier = np.ones(inputs.shape)
    trace = gru_forward(params, embedded, mask)
    return trace.final_h, HiddenCache(trace, inputs, multiplier)


def backward_hidden(params: ModelParams, cache: HiddenCache, d_final: np.ndarray) -> None:
    """BPTT plus scatter back into the embedding table (padding row stays zero)."""
    d_embedded = gru_backward(params, cache.trace, d_final)
    d_embedded = d_embedded * cache.dropout_multiplier[:, :, None]
    np.add.at(params.embedding.grad, cache.inputs, d_embedded)
    params.embedding.grad[0, :] = 0.0


def forward_softmax(params: ModelParams, h_final: np.ndarray) -> np.ndarray:
    """Class probabilities over all m+1 columns (padding column included)."""
    if params.w_out is None or params.b_out is None:
        raise ShapeError("model has no softmax head")
    return softmax_rows(h_final @ params.w_out.value + params.b_out.value)


def backward_softmax(params: ModelParams, h_final: np.ndarray, d_logits: np.ndarray) -> np.ndarray:
    params.w_out.grad += h_final.T @ d_logits
    params.b_out.grad += d_logits.sum(axis=0, keepdims=True)
    return d_logits @ params.w_out.value.T


@dataclass
class EmbeddingHeadCache:
    h_final: np.ndarray
    pre_act: np.ndarray
    hidden: np.ndarray


def forward_embedding_output(
    params: ModelParams, h_final: np.ndarray
) -> tuple[np.ndarray, EmbeddingHeadCache]:
    """Predicted next-item embedding: relu dense layer, then linear projection."""
    if params.w_hid is None or params.w_emb is None or params.b_emb is None:
        raise ShapeError("model has no embedding head")
    pre_act = h_final @ params.w_hid.value
    hidden = np.maximum(pre_act, 0.0)
    out = hidden @ params.w_emb.value + params.b_emb.value
    return out, EmbeddingHeadCache(h_final, pre_act, hidden)


def backward_embedding_output(
    params: ModelParams, cache: EmbeddingHeadCache, d_out: np.ndarray
) -> np.ndarray:
    params.w_emb.grad += cache.hidden.T @ d_out
    params.b_emb.grad += d_out.sum(axis=0, keepdims=True)
    d_hidden = d_out @ params.w_emb.value.T
    d_pre = d_hidden * (cache.pre_act > 0.0)
    params.w_hid.grad += cache.h_final.T @ d_pre
    return d_pre @ params.w_hid.value.T


def clone_params(params: ModelParams, reset_optimizer: bool = True) -> ModelParams:
    """Deep copy of parameter values; optimizer state optionally zeroed."""
    def cp(p: Parameter | None) -> Parameter | None:
        if p is None:
            return None
        fresh = Parameter(p.name, p.value.copy())
        if not reset_optimizer:
            fresh.adam_m = p.adam_m.copy()
            fresh.adam_v = p.adam_v.copy()
        return fresh

    return ModelParams(
        embedding=cp(params.embedding),
        w_z=cp(params.w_z), w_r=cp(params.w_r), w_h=cp(params.w_h),
        u_z=cp(params.u_z), u_r=cp(params.u_r), u_h=cp(params.u_h),
        b_z=cp(params.b_z), b_r=cp(params.b_r), b_h=cp(params.b_h),
        w_out=cp(params.w_out), b_out=cp(params.b_out),
        w_hid=cp(params.w_hid), w_emb=cp(params.w_emb), b_emb=cp(params.b_emb),
        target_embedding=None if params.target_embedding is None else params.target_embedding.copy(),
    )


def config_for_vocab(config: ModelConfig, vocab_size_with_pad: int) -> ModelConfig:
    return replace(config, vocab_size_with_pad=vocab_size_with_pad)
