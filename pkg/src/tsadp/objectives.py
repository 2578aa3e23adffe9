"""Loss functions: cosine similarity, temporal contrastive loss, masked
prediction loss and their weighted sum.

The contrastive loss anchors each visual embedding ``z_v[t]`` and treats the
language embeddings of the *same* sequence as candidates; the matching time
index is the positive, every other index a negative. Losses are summed over
time, not averaged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ShapeError
from .numeric import DEFAULT_EPS, as_matrix, as_vector, l2_normalize, \
    l2_normalize_backward, logsumexp, row_softmax


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    lambda1: float = 1.0
    lambda2: float = 1.0
    k: int = 1
    mask_rate: float = 0.25
    symmetric: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if int(self.k) != self.k or self.k < 0:
            raise ValueError(f"k must be a nonnegative integer, got {self.k}")
        if not 0 <= self.mask_rate < 1:
            raise ValueError(f"mask_rate must lie in [0, 1), got {self.mask_rate}")


def cosine_sim(a, b, eps: float = DEFAULT_EPS) -> float:
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    return float(np.dot(l2_normalize(a, eps), l2_normalize(b, eps)))


def contrastive_forward(z_v: np.ndarray, z_l: np.ndarray, tau: float,
                        symmetric: bool = False) -> tuple[np.ndarray, tuple]:
    """Per-sequence contrastive losses for stacks of shape (B, T, e)."""
    n_v = l2_normalize(z_v)
    n_l = l2_normalize(z_l)
    logits = (n_v @ np.swapaxes(n_l, 1, 2)) / tau
    diag = np.diagonal(logits, axis1=1, axis2=2)
    loss = np.sum(logsumexp(logits, axis=2) - diag, axis=1)
    if symmetric:
        loss = loss + np.sum(logsumexp(logits, axis=1) - diag, axis=1)
    return loss, (z_v, z_l, n_v, n_l, logits)


def contrastive_backward(weights: np.ndarray, tau: float, cache: tuple,
                         symmetric: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum_b weights[b] * loss[b]`` w.r.t. ``z_v`` and ``z_l``."""
    z_v, z_l, n_v, n_l, logits = cache
    eye = np.eye(logits.shape[1])
    d_logits = row_softmax(logits, axis=2) - eye
    if symmetric:
        d_logits = d_logits + row_softmax(logits, axis=1) - eye
    d_logits = d_logits * (np.asarray(weights, dtype=np.float64)[:, None, None] / tau)
    d_nv = d_logits @ n_l
    d_nl = np.swapaxes(d_logits, 1, 2) @ n_v
    return l2_normalize_backward(z_v, d_nv), l2_normalize_backward(z_l, d_nl)


def temporal_contrastive_loss(z_v, z_l, tau: float, symmetric: bool = False) -> float:
    """Contrastive loss of one sequence of paired embeddings.

    ``z_v`` and ``z_l`` are (T, e) arrays (or lists of vectors).
    """
    if len(z_v) == 0 or len(z_l) == 0:
        raise EmptyInputError("contrastive loss needs at least one time step")
    z_v = as_matrix(np.stack(list(z_v)) if isinstance(z_v, list) else z_v, "z_v")
    z_l = as_matrix(np.stack(list(z_l)) if isinstance(z_l, list) else z_l, "z_l")
    if z_v.shape != z_l.shape:
        raise ShapeError(f"visual {z_v.shape} and language {z_l.shape} embeddings differ")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    loss, _ = contrastive_forward(z_v[None], z_l[None], tau, symmetric)
    return float(loss[0])


def masked_prediction_loss(pred, truth, mask) -> float:
    """Sum of squared errors over the masked time indices.

    ``pred`` and ``truth`` are indexed by time (sequences, or a dict such as
    :func:`~tsadp.model.predict_masked` returns); entries outside ``mask``
    are never read.
    """
    total = 0.0
    for t in sorted(mask):
        have = t in pred if isinstance(pred, dict) else t < len(pred)
        if not 0 <= t < len(truth) or not have:
            raise IndexError(f"mask index {t} out of range")
        diff = np.asarray(pred[t], dtype=np.float64) - np.asarray(truth[t], dtype=np.float64)
        total += float(np.dot(diff, diff))
    return total


def total_loss(lc: float, lm: float, cfg: LossConfig) -> float:
    return cfg.lambda1 * lc + cfg.lambda2 * lm
