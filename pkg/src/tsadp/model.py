"""Full model: prompt generator, shared-space heads, mask token, predictor.

Parameter order (used by checkpoints, gradient bundles and gradcheck)::

    w_q, w_k, w_v, w_p, u_v, u_l, mask_token, predictor

``mask_token`` is a vector of length ``d_visual``; everything else is a
matrix. Visual embeddings are ``u_v @ P_t``, language embeddings
``u_l @ l_t``. Masked prediction replaces masked frames by the mask token,
re-runs the prompt generator and maps the corrupted prompt through
``predictor``; its targets are the clean visual embeddings, held constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import dpg
from .dpg import DpgParams, WindowSpec, init_dpg_params
from .errors import DegenerateContextError, EmptyInputError, ShapeError
from .numeric import as_float, as_matrix, as_vector, contract
from .objectives import LossConfig, contrastive_forward, total_loss

PARAM_NAMES = ("w_q", "w_k", "w_v", "w_p", "u_v", "u_l", "mask_token", "predictor")


@dataclass
class TsadpModel:
    dpg: DpgParams
    u_v: np.ndarray
    u_l: np.ndarray
    mask_token: np.ndarray
    predictor: np.ndarray

    def __post_init__(self):
        self.u_v = as_matrix(self.u_v, "u_v")
        self.u_l = as_matrix(self.u_l, "u_l")
        self.mask_token = as_vector(self.mask_token, "mask_token")
        self.predictor = as_matrix(self.predictor, "predictor")
        p = self.dpg
        if self.u_v.shape[1] != p.d_prompt:
            raise ShapeError(f"u_v {self.u_v.shape} does not accept prompts of dim {p.d_prompt}")
        if self.predictor.shape != self.u_v.shape:
            raise ShapeError(f"predictor {self.predictor.shape} must match u_v {self.u_v.shape}")
        if self.u_l.shape[0] != self.u_v.shape[0]:
            raise ShapeError(f"u_l {self.u_l.shape} and u_v {self.u_v.shape} disagree on d_emb")
        if self.mask_token.shape[0] != p.d_in:
            raise ShapeError(f"mask_token has dim {self.mask_token.shape[0]}, frames have {p.d_in}")

    @property
    def d_visual(self) -> int:
        return self.dpg.d_in

    @property
    def d_language(self) -> int:
        return self.u_l.shape[1]

    @property
    def d_emb(self) -> int:
        return self.u_v.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        """Parameters in canonical order. Arrays are shared, not copied."""
        p = self.dpg
        return {"w_q": p.w_q, "w_k": p.w_k, "w_v": p.w_v, "w_p": p.w_p,
                "u_v": self.u_v, "u_l": self.u_l,
                "mask_token": self.mask_token, "predictor": self.predictor}

    @classmethod
    def from_params(cls, params: dict[str, np.ndarray], heads: int = 1) -> "TsadpModel":
        missing = [n for n in PARAM_NAMES if n not in params]
        if missing:
            raise KeyError(f"missing parameters: {missing}")
        d = {n: np.array(as_float(params[n])) for n in PARAM_NAMES}
        return cls(DpgParams(d["w_q"], d["w_k"], d["w_v"], d["w_p"], heads),
                   d["u_v"], d["u_l"], d["mask_token"], d["predictor"])

    def copy(self) -> "TsadpModel":
        return TsadpModel.from_params(self.params(), self.dpg.heads)


def init_model(d_visual: int, d_language: int, d_proj: int | None = None,
               d_out: int | None = None, d_prompt: int | None = None,
               d_emb: int | None = None, heads: int = 1, seed: int = 0) -> TsadpModel:
    """Seeded fan-in uniform init; hidden sizes default to ``d_visual``."""
    d_proj = d_proj or d_visual
    d_out = d_out or d_visual
    d_prompt = d_prompt or d_visual
    d_emb = d_emb or d_visual
    rng = np.random.default_rng(seed)
    params = init_dpg_params(rng, d_visual, d_proj, d_out, d_prompt, heads)

    def u(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    u_v = u(d_emb, d_prompt)
    u_l = u(d_emb, d_language)
    predictor = u(d_emb, d_prompt)
    return TsadpModel(params, u_v, u_l, np.zeros(d_visual), predictor)


@dataclass
class TrainingBatch:
    """Paired (visual, language) sequences and one mask set per sequence."""

    sequences: list[tuple[np.ndarray, np.ndarray]]
    mask_sets: list[frozenset[int]] = field(default_factory=list)

    def __post_init__(self):
        self.sequences = [(as_matrix(v, "visual"), as_matrix(l, "language"))
                          for v, l in self.sequences]
        if not self.mask_sets:
            self.mask_sets = [frozenset() for _ in self.sequences]
        self.mask_sets = [frozenset(int(t) for t in m) for m in self.mask_sets]
        if len(self.mask_sets) != len(self.sequences):
            raise ValueError("need exactly one mask set per sequence")
        for (v, l), m in zip(self.sequences, self.mask_sets):
            if v.shape[0] != l.shape[0]:
                raise ShapeError(f"visual length {v.shape[0]} != language length {l.shape[0]}")
            bad = [t for t in m if not 0 <= t < v.shape[0]]
            if bad:
                raise IndexError(f"mask indices {sorted(bad)} out of range for T={v.shape[0]}")

    def __len__(self) -> int:
        return len(self.sequences)


def _check_inputs(model: TsadpModel, visual: np.ndarray, language: np.ndarray | None = None):
    if visual.shape[-1] != model.d_visual:
        raise ShapeError(f"visual features have dim {visual.shape[-1]}, model expects {model.d_visual}")
    if language is not None and language.shape[-1] != model.d_language:
        raise ShapeError(
            f"language features have dim {language.shape[-1]}, model expects {model.d_language}")


def _check_mask(mask, T: int) -> np.ndarray:
    m = np.zeros(T, dtype=bool)
    for t in mask:
        if not 0 <= t < T:
            raise IndexError(f"mask index {t} out of range for T={T}")
        m[t] = True
    if T > 0 and m.all():
        raise DegenerateContextError("mask covers every frame; nothing left to predict from")
    return m


def encode_visual(model: TsadpModel, seq, spec: WindowSpec) -> np.ndarray:
    """Visual embeddings, one row per frame."""
    seq = as_matrix(seq, "sequence")
    _check_inputs(model, seq)
    prompts, _ = dpg.forward_batch(seq[None], model.dpg, spec.k)
    return contract(prompts[0], model.u_v.T)


def encode_language(model: TsadpModel, lseq) -> np.ndarray:
    lseq = as_matrix(lseq, "language sequence")
    _check_inputs(model, np.zeros((0, model.d_visual)), lseq)
    return contract(lseq, model.u_l.T)


def corrupt(seq: np.ndarray, mask: np.ndarray, token: np.ndarray) -> np.ndarray:
    return np.where(mask[..., None], token, seq)


def predict_masked(model: TsadpModel, seq, mask, spec: WindowSpec) -> dict[int, np.ndarray]:
    """Predicted embeddings for the masked frames, keyed by time index."""
    seq = as_matrix(seq, "sequence")
    _check_inputs(model, seq)
    m = _check_mask(mask, seq.shape[0])
    if not m.any():
        return {}
    prompts, _ = dpg.forward_batch(corrupt(seq, m, model.mask_token)[None], model.dpg, spec.k)
    z_hat = contract(prompts[0], model.predictor.T)
    return {int(t): z_hat[t] for t in np.flatnonzero(m)}


def infer_prompts(model: TsadpModel, seq, spec: WindowSpec) -> list[np.ndarray]:
    seq = as_matrix(seq, "sequence")
    _check_inputs(model, seq)
    return dpg.dpg_forward(seq, model.dpg, spec)


class GroupPass(NamedTuple):
    """Forward intermediates for a stack of equal-length sequences."""
    members: list[int]
    language: np.ndarray
    mask: np.ndarray
    prompts: np.ndarray
    clean_cache: dpg.DpgCache
    tcl_cache: tuple
    corrupt_prompts: np.ndarray
    corrupt_cache: dpg.DpgCache
    residual: np.ndarray      # (z_hat - target) on masked frames, 0 elsewhere
    lc: np.ndarray
    lm: np.ndarray


def group_by_length(batch: TrainingBatch) -> list[list[int]]:
    groups: dict[int, list[int]] = {}
    for i, (v, _) in enumerate(batch.sequences):
        groups.setdefault(v.shape[0], []).append(i)
    return list(groups.values())


def forward_groups(model: TsadpModel, batch: TrainingBatch, cfg: LossConfig,
                   targets: list[np.ndarray] | None = None) -> list[GroupPass]:
    """Run every sequence of ``batch`` through both loss branches.

    ``targets`` overrides the masked-prediction targets (one (T, e) array per
    sequence); by default they are the clean visual embeddings under the
    current weights.
    """
    passes = []
    for members in group_by_length(batch):
        x = np.stack([batch.sequences[i][0] for i in members])
        lang = np.stack([batch.sequences[i][1] for i in members])
        _check_inputs(model, x, lang)
        mask = np.stack([_check_mask(batch.mask_sets[i], x.shape[1]) for i in members])

        prompts, clean_cache = dpg.forward_batch(x, model.dpg, cfg.k)
        z_v = contract(prompts, model.u_v.T)
        z_l = contract(lang, model.u_l.T)
        lc, tcl_cache = contrastive_forward(z_v, z_l, cfg.tau, cfg.symmetric)

        target = z_v if targets is None else np.stack([targets[i] for i in members])
        x_bad = corrupt(x, mask, model.mask_token)
        c_prompts, c_cache = dpg.forward_batch(x_bad, model.dpg, cfg.k)
        z_hat = contract(c_prompts, model.predictor.T)
        residual = np.where(mask[..., None], z_hat - target, 0.0)
        lm = np.sum(residual * residual, axis=(1, 2))
        passes.append(GroupPass(members, lang, mask, prompts, clean_cache, tcl_cache,
                                c_prompts, c_cache, residual, lc, lm))
    return passes


def clean_targets(model: TsadpModel, batch: TrainingBatch, k: int) -> list[np.ndarray]:
    """Clean visual embeddings per sequence, detached copies."""
    spec = WindowSpec(k)
    return [encode_visual(model, v, spec).copy() for v, _ in batch.sequences]


def reduce_losses(passes: list[GroupPass], n: int, cfg: LossConfig) -> tuple[float, float, float]:
    dtype = np.result_type(*(g.lc.dtype for g in passes), np.float64)
    lc = np.zeros(n, dtype=dtype)
    lm = np.zeros(n, dtype=dtype)
    for g in passes:
        lc[g.members] = g.lc
        lm[g.members] = g.lm
    # fixed sequence order keeps the mean independent of how sequences were grouped;
    # results stay numpy scalars so extended-precision evaluations keep their digits
    lc_mean = np.sum(lc) / n
    lm_mean = np.sum(lm) / n
    return lc_mean, lm_mean, total_loss(lc_mean, lm_mean, cfg)


def forward_losses(model: TsadpModel, batch: TrainingBatch, cfg: LossConfig,
                   targets: list[np.ndarray] | None = None) -> tuple[float, float, float]:
    """``(lc, lm, total)``: batch means of both losses and their weighted sum."""
    if len(batch) == 0:
        raise EmptyInputError("batch contains no sequences")
    return reduce_losses(forward_groups(model, batch, cfg, targets), len(batch), cfg)
