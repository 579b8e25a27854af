"""Shared toy-model helpers for gradient checking and small training runs."""

import numpy as np

from srnlab.data import MiniBatch, pad_batch
from srnlab.model import (
    ModelConfig,
    backward_embedding_output,
    backward_hidden,
    backward_softmax,
    forward_embedding_output,
    forward_hidden,
    forward_softmax,
)
from srnlab.training import (
    DistillConfig,
    _cosine_core,
    _distillation_core,
    cross_entropy_batch,
)

TOY = dict(vocab_size_with_pad=11, embed_dim=4, gru_units=8, window=5)


def toy_config(**overrides) -> ModelConfig:
    kwargs = dict(TOY, embed_dropout_rate=0.0)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def toy_batch(window=5, seed=1, batch=4, m=10) -> MiniBatch:
    rng = np.random.default_rng(seed)
    prefixes = [
        list(rng.integers(1, m + 1, size=rng.integers(1, window + 3)))
        for _ in range(batch)
    ]
    inputs, mask = pad_batch(prefixes, window)
    labels = rng.integers(1, m + 1, size=batch)
    return MiniBatch(inputs, mask, labels)


def ce_loss_fn(params, batch, dropout_rate=0.0, dropout_seed=42):
    """Deterministic full-model loss closure for finite_difference_check."""

    def loss_fn():
        params.zero_grads()
        rng = np.random.default_rng(dropout_seed)  # frozen mask: same draw every call
        h_final, cache = forward_hidden(params, batch.inputs, batch.mask, dropout_rate, rng)
        probs = forward_softmax(params, h_final)
        loss, d_logits = cross_entropy_batch(probs, batch.labels)
        d_h = backward_softmax(params, h_final, d_logits)
        backward_hidden(params, cache, d_h)
        return loss

    return loss_fn


def distill_loss_fn(params, teacher_probs, batch, lam, temperature=1.0):
    lam_row = np.full(len(batch), lam)
    cfg = DistillConfig(lam=lam, temperature=temperature)

    def loss_fn():
        params.zero_grads()
        h_final, cache = forward_hidden(params, batch.inputs, batch.mask)
        logits = h_final @ params.w_out.value + params.b_out.value
        loss, d_logits = _distillation_core(
            logits, batch.labels, teacher_probs, lam_row, cfg.temperature
        )
        d_h = backward_softmax(params, h_final, d_logits / len(batch))
        backward_hidden(params, cache, d_h)
        return loss

    return loss_fn


def cosine_loss_fn(params, targets, batch):
    def loss_fn():
        params.zero_grads()
        h_final, cache = forward_hidden(params, batch.inputs, batch.mask)
        preds, head_cache = forward_embedding_output(params, h_final)
        loss, d_pred = _cosine_core(preds, targets[batch.labels])
        d_h = backward_embedding_output(params, head_cache, d_pred / len(batch))
        backward_hidden(params, cache, d_h)
        return loss

    return loss_fn
