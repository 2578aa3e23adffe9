"""Dynamic prompt generator: windowed self-attention over frame features.

For each frame ``t`` the generator looks at the ``2k+1`` frames centred on
``t`` (indices clamped at the sequence edges), scores every window frame
against the centre with scaled dot products, mixes the value projections
with those weights and projects the result into prompt space::

    A[c, j] = softmax_j(<W_q v_t, W_k v_j> / sqrt(d_proj))
    v_hat_t = sum_j A[c, j] W_v v_j
    P_t     = W_p v_hat_t

With ``heads > 1`` the query/key space and the value output are split into
equal chunks, each chunk gets its own attention weights, and the chunks are
concatenated before ``W_p``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeError
from .numeric import as_float, as_matrix, as_vector, contract, row_softmax


@dataclass(frozen=True)
class WindowSpec:
    k: int = 1
    boundary: str = "clamp"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ValueError(f"window half-size must be a nonnegative integer, got {self.k}")
        if self.boundary != "clamp":
            raise ValueError(f"unsupported boundary policy {self.boundary!r}")

    @property
    def length(self) -> int:
        return 2 * self.k + 1


@dataclass
class DpgParams:
    """Projection matrices of the prompt generator.

    ``w_q``, ``w_k``: (d_proj, d); ``w_v``: (d_out, d); ``w_p``: (d_prompt, d_out).
    ``heads`` is a hyperparameter, not a learned weight.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_p: np.ndarray
    heads: int = 1

    def __post_init__(self):
        self.w_q = as_matrix(self.w_q, "w_q")
        self.w_k = as_matrix(self.w_k, "w_k")
        self.w_v = as_matrix(self.w_v, "w_v")
        self.w_p = as_matrix(self.w_p, "w_p")
        d = self.w_q.shape[1]
        if self.w_k.shape != self.w_q.shape:
            raise ShapeError(f"w_q {self.w_q.shape} and w_k {self.w_k.shape} must match")
        if self.w_v.shape[1] != d:
            raise ShapeError(f"w_v {self.w_v.shape} must take inputs of dim {d}")
        if self.w_p.shape[1] != self.w_v.shape[0]:
            raise ShapeError(f"w_p {self.w_p.shape} does not accept w_v output {self.w_v.shape[0]}")
        if self.heads < 1 or self.d_proj % self.heads or self.d_out % self.heads:
            raise ShapeError(
                f"heads={self.heads} must divide d_proj={self.d_proj} and d_out={self.d_out}")

    @property
    def d_in(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_proj(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_out(self) -> int:
        return self.w_v.shape[0]

    @property
    def d_prompt(self) -> int:
        return self.w_p.shape[0]


def init_dpg_params(rng: np.random.Generator, d: int, d_proj: int, d_out: int,
                    d_prompt: int, heads: int = 1) -> DpgParams:
    """Fan-in uniform init, ``U(-1/sqrt(d_in), 1/sqrt(d_in))`` per matrix."""
    def u(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))
    return DpgParams(u(d_proj, d), u(d_proj, d), u(d_out, d), u(d_prompt, d_out), heads)


def window_indices(T: int, k: int) -> np.ndarray:
    """(T, 2k+1) array of clamped frame indices; column ``k`` is ``t``."""
    offsets = np.arange(-k, k + 1)
    return np.clip(np.arange(T)[:, None] + offsets[None, :], 0, T - 1)


def extract_window(seq, t: int, spec: WindowSpec) -> list[np.ndarray]:
    seq = as_matrix(seq, "sequence")
    T = seq.shape[0]
    if not 0 <= t < T:
        raise IndexError(f"frame index {t} out of range for sequence of length {T}")
    return [seq[i] for i in window_indices(T, spec.k)[t]]


def _check_window(window, params: DpgParams) -> np.ndarray:
    if len(window) == 0:
        raise ShapeError("attention window is empty")
    w = np.stack([as_vector(v, "window frame") for v in window])
    if w.shape[1] != params.d_in:
        raise ShapeError(f"window frames have dim {w.shape[1]}, params expect {params.d_in}")
    return w


def attention_scores(window, params: DpgParams) -> np.ndarray:
    """Full self-attention matrix over a window.

    Returns ``(W, W)`` for a single head and ``(heads, W, W)`` otherwise.
    """
    w = _check_window(window, params)
    H = params.heads
    dh = params.d_proj // H
    q = contract(w, params.w_q.T).reshape(len(w), H, dh)
    k = contract(w, params.w_k.T).reshape(len(w), H, dh)
    s = np.einsum("ihd,jhd->hij", q, k) / np.sqrt(dh)
    a = row_softmax(s)
    return a[0] if H == 1 else a


def attend(window, a, params: DpgParams, center_row: int) -> np.ndarray:
    w = _check_window(window, params)
    a = as_float(a)
    H = params.heads
    if a.ndim == 2:
        a = a[None]
    if a.shape != (H, len(w), len(w)):
        raise ShapeError(f"attention of shape {a.shape} does not fit window of {len(w)} frames")
    values = contract(w, params.w_v.T).reshape(len(w), H, -1)
    out = np.einsum("hj,jhd->hd", a[:, center_row, :], values)
    return out.reshape(-1)


def make_prompt(v_hat, params: DpgParams) -> np.ndarray:
    v_hat = as_vector(v_hat, "v_hat")
    if v_hat.shape[0] != params.d_out:
        raise ShapeError(f"v_hat has dim {v_hat.shape[0]}, w_p expects {params.d_out}")
    return contract(params.w_p, v_hat)


class DpgCache(NamedTuple):
    x: np.ndarray       # (B, T, d)
    gather: np.ndarray  # (T*W, T) one-hot window gather
    q: np.ndarray       # (B, T, H, dh)
    k: np.ndarray       # (B, T, W, H, dh)
    v: np.ndarray       # (B, T, W, H, dvh)
    a: np.ndarray       # (B, T, H, W)
    v_hat: np.ndarray   # (B, T, d_out)


def _gather_matrix(T: int, k: int) -> np.ndarray:
    idx = window_indices(T, k).reshape(-1)
    g = np.zeros((idx.size, T))
    g[np.arange(idx.size), idx] = 1.0
    return g


def forward_batch(x: np.ndarray, params: DpgParams, k: int) -> tuple[np.ndarray, DpgCache]:
    """Prompts for a stack of equal-length sequences ``x`` of shape (B, T, d)."""
    x = as_float(x)
    if x.ndim != 3 or x.shape[2] != params.d_in:
        raise ShapeError(f"expected (B, T, {params.d_in}) features, got {x.shape}")
    B, T, _ = x.shape
    W = 2 * k + 1
    H = params.heads
    dh = params.d_proj // H
    idx = window_indices(T, k)

    q_all = contract(x, params.w_q.T)
    k_all = contract(x, params.w_k.T)
    v_all = contract(x, params.w_v.T)
    q = q_all.reshape(B, T, H, dh)
    keys = k_all[:, idx].reshape(B, T, W, H, dh)
    vals = v_all[:, idx].reshape(B, T, W, H, -1)

    s = np.einsum("bthd,btwhd->bthw", q, keys) / np.sqrt(dh)
    a = row_softmax(s)
    v_hat = np.einsum("bthw,btwhd->bthd", a, vals).reshape(B, T, params.d_out)
    prompts = contract(v_hat, params.w_p.T)
    return prompts, DpgCache(x, _gather_matrix(T, k), q, keys, vals, a, v_hat)


def backward_batch(grad_prompts: np.ndarray, params: DpgParams,
                   cache: DpgCache) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of a scalar w.r.t. the DPG weights and the input frames."""
    x, gather, q, keys, vals, a, v_hat = cache
    B, T, d = x.shape
    W = keys.shape[2]
    H, dh = q.shape[2], q.shape[3]
    flat = lambda z: z.reshape(-1, z.shape[-1])

    grads = {"w_p": flat(grad_prompts).T @ flat(v_hat)}
    d_vhat = (grad_prompts @ params.w_p).reshape(B, T, H, -1)

    d_a = np.einsum("bthd,btwhd->bthw", d_vhat, vals)
    d_vals = np.einsum("bthw,bthd->btwhd", a, d_vhat)
    d_s = a * (d_a - np.sum(a * d_a, axis=-1, keepdims=True)) / np.sqrt(dh)
    d_q = np.einsum("bthw,btwhd->bthd", d_s, keys).reshape(B, T, -1)
    d_keys = np.einsum("bthw,bthd->btwhd", d_s, q)

    # scatter window slots back onto the frames they were gathered from
    d_k_all = gather.T @ d_keys.reshape(B, T * W, -1)
    d_v_all = gather.T @ d_vals.reshape(B, T * W, -1)

    xf = flat(x)
    grads["w_q"] = flat(d_q).T @ xf
    grads["w_k"] = flat(d_k_all).T @ xf
    grads["w_v"] = flat(d_v_all).T @ xf
    d_x = d_q @ params.w_q + d_k_all @ params.w_k + d_v_all @ params.w_v
    return grads, d_x


def dpg_forward(seq, params: DpgParams, spec: WindowSpec) -> list[np.ndarray]:
    """One prompt vector per frame of ``seq`` (shape (T, d))."""
    seq = as_matrix(seq, "sequence")
    if seq.shape[0] < 1:
        raise ShapeError("sequence must contain at least one frame")
    prompts, _ = forward_batch(seq[None], params, spec.k)
    return list(prompts[0])
