"""Multi-label losses over score matrices of shape (batch, n_labels).

``targets`` is a 0/1 array of the same shape; ``mask`` marks the label
columns that count (the root column is always masked out by callers).
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops

# Additive mask for logsumexp: finite so tensors never hold inf, large enough
# that exp() underflows to exactly zero.
_NEG = -1e30

LOSS_KINDS = ("zlpr", "bce")


def _as_2d(scores: Tensor, targets) -> tuple[Tensor, np.ndarray]:
    t = np.asarray(targets, dtype=np.float64)
    if scores.ndim == 1:
        scores = ops.reshape(scores, (1, scores.shape[0]))
        t = t.reshape(1, -1)
    if t.shape != scores.shape:
        raise ValueError(f"targets shape {t.shape} does not match scores {scores.shape}")
    return scores, t


def zlpr_loss(scores: Tensor, targets, mask=None) -> Tensor:
    """Zero-bounded log-sum-exp pairwise-rank loss, averaged over the batch.

    Per row: ``log(1 + sum_pos exp(-s)) + log(1 + sum_neg exp(s))``.
    """
    scores, t = _as_2d(scores, targets)
    b, n = scores.shape
    m = np.ones(n) if mask is None else np.asarray(mask, dtype=np.float64)
    pos = t * m
    neg = (1.0 - t) * m
    zero = ops.constant(np.zeros((b, 1)))
    pos_logits = ops.add(ops.scale(scores, -1.0), ops.constant(np.where(pos > 0, 0.0, _NEG)))
    neg_logits = ops.add(scores, ops.constant(np.where(neg > 0, 0.0, _NEG)))
    pos_term = ops.logsumexp(ops.concat([zero, pos_logits], axis=1), axis=1)
    neg_term = ops.logsumexp(ops.concat([zero, neg_logits], axis=1), axis=1)
    return ops.mean(ops.add(pos_term, neg_term))


def bce_loss(scores: Tensor, targets, mask=None) -> Tensor:
    """Sigmoid cross-entropy averaged over the unmasked labels, then the batch.

    Uses ``softplus(s) - y*s`` (softplus via logsumexp) which equals the
    logged-sigmoid form without ever taking log of 0.
    """
    scores, t = _as_2d(scores, targets)
    b, n = scores.shape
    m = np.ones(n) if mask is None else np.asarray(mask, dtype=np.float64)
    stacked = ops.concat([ops.constant(np.zeros((b, n, 1))), ops.reshape(scores, (b, n, 1))], axis=2)
    softplus = ops.logsumexp(stacked, axis=2)
    per_label = ops.sub(softplus, ops.mul(ops.constant(t), scores))
    weights = np.broadcast_to(m, (b, n)) / (m.sum() * b)
    return ops.sum(ops.mul(per_label, ops.constant(weights)))


def multilabel_loss(kind: str, scores: Tensor, targets, mask=None) -> Tensor:
    if kind == "zlpr":
        return zlpr_loss(scores, targets, mask)
    if kind == "bce":
        return bce_loss(scores, targets, mask)
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
