"""Small dense kernels in float64.

Matrices and vectors are plain ``numpy`` float64 arrays (row-major). The
helpers here add the shape checks and the numerically careful variants the
rest of the package relies on.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

DEFAULT_EPS = 1e-12


def as_float(x) -> np.ndarray:
    """Array of at least float64 precision; wider floats (longdouble) are kept."""
    a = np.asarray(x)
    return a.astype(np.result_type(a.dtype, np.float64), copy=False)


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = as_float(x)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    a = as_float(x)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    return a


def contract(a, b) -> np.ndarray:
    """Sum over the last axis of ``a`` and the first axis of ``b``.

    Accumulation runs left to right over the shared axis, so an entry of the
    result does not depend on how many rows are stacked in ``a``. A frame
    projected alone and the same frame projected inside a batch give the
    same bits.
    """
    a = as_float(a)
    b = as_float(b)
    if a.ndim < 1 or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 1:
        out = a[..., 0] * b[0]
        for p in range(1, b.shape[0]):
            out = out + a[..., p] * b[p]
        return out
    out = a[..., 0:1] * b[0]
    for p in range(1, b.shape[0]):
        out = out + a[..., p:p + 1] * b[p]
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with a fixed accumulation order.

    ``b`` may be a matrix or a vector. Raises :class:`ShapeError` naming
    both shapes when the inner dimensions disagree.
    """
    a = as_float(a)
    b = as_float(b)
    if a.ndim != 2:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return contract(a, b)


def row_softmax(x, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis`` with max subtraction."""
    x = as_float(x)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(x, axis: int = -1) -> np.ndarray:
    x = as_float(x)
    m = x.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def l2_normalize(v, eps: float = DEFAULT_EPS, axis: int = -1) -> np.ndarray:
    """Return ``v / max(||v||, eps)`` along ``axis``; zero stays zero."""
    v = as_float(v)
    norm = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
    return v / np.maximum(norm, eps)


def l2_normalize_backward(v: np.ndarray, grad_out: np.ndarray,
                          eps: float = DEFAULT_EPS) -> np.ndarray:
    """Vector-Jacobian product of :func:`l2_normalize` along the last axis."""
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    clamped = norm < eps
    safe = np.where(clamped, 1.0, norm)
    n = v / safe
    proj = np.sum(n * grad_out, axis=-1, keepdims=True)
    unclamped = (grad_out - n * proj) / safe
    return np.where(clamped, grad_out / eps, unclamped)
