"""Masking policy, optimizers and the seeded training loop.

Ablations:

* ``no_tcl`` trains with ``lambda1 = 0``; the contrastive loss is still
  computed and logged.
* ``no_dpg`` forces a window of one frame, so attention is the identity on
  the frame itself and each prompt is ``W_p W_v v_t``. The query and key
  matrices then receive exactly zero gradient.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .dpg import WindowSpec
from .errors import EmptyInputError, NonFiniteLossError, ShapeError
from .gradients import GradBundle, loss_and_grads
from .model import TrainingBatch, TsadpModel
from .objectives import LossConfig

ABLATIONS = ("full", "no_dpg", "no_tcl")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class MaskSpec:
    rate: float = 0.25
    seed: int = 0
    policy: str = "uniform-iid"

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise ValueError(f"mask rate must lie in [0, 1), got {self.rate}")
        if self.policy != "uniform-iid":
            raise ValueError(f"unknown mask policy {self.policy!r}")


def mask_rng(spec: MaskSpec, counter: int) -> np.random.Generator:
    """Generator for the ``counter``-th mask drawn under ``spec``."""
    return np.random.default_rng([spec.seed, counter])


def sample_mask(T: int, spec: MaskSpec, rng: np.random.Generator) -> frozenset[int]:
    """Mask each frame independently with probability ``spec.rate``.

    A draw that hides every frame gets its highest masked index unmasked.
    """
    if T < 1:
        raise ValueError(f"sequence length must be positive, got {T}")
    hit = rng.random(T) < spec.rate
    if hit.all():
        hit[T - 1] = False
    return frozenset(int(t) for t in np.flatnonzero(hit))


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    ablation: str = "full"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    def effective_loss(self) -> LossConfig:
        """Loss settings after the ablation switch is applied."""
        if self.ablation == "no_tcl":
            return dataclasses.replace(self.loss, lambda1=0.0)
        if self.ablation == "no_dpg":
            return dataclasses.replace(self.loss, k=0)
        return self.loss

    def window(self) -> WindowSpec:
        return WindowSpec(self.effective_loss().k)


class AdamState(NamedTuple):
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int


def init_optimizer_state(params: dict[str, np.ndarray], cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return None
    zeros = {n: np.zeros_like(p) for n, p in params.items()}
    return AdamState(zeros, {n: z.copy() for n, z in zeros.items()}, 0)


def optimizer_step(params: dict[str, np.ndarray], grads: GradBundle, state,
                   cfg: TrainConfig) -> tuple[dict[str, np.ndarray], object]:
    """One update; returns new parameter arrays and the new optimizer state."""
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {grads[name].shape}, "
                             f"parameter has {p.shape}")
    lr = cfg.learning_rate
    if cfg.optimizer == "sgd":
        return {n: p - lr * grads[n] for n, p in params.items()}, state

    step = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, step)


def _pairs(dataset: Iterable) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(seq[0], seq[1]) for seq in dataset]


def train(model: TsadpModel, dataset, cfg: TrainConfig,
          metrics_path=None) -> tuple[TsadpModel, list[dict]]:
    """Train a copy of ``model`` and return it with per-epoch metrics.

    ``dataset`` is any sequence of ``(visual, language, ...)`` tuples. Each
    history record holds ``epoch``, ``loss_total``, ``loss_tcl``,
    ``loss_mtp`` (means over the epoch's sequences, measured before each
    update) and ``wall_ms``. When ``metrics_path`` is given the records are
    also written there as JSON Lines.
    """
    pairs = _pairs(dataset)
    if not pairs:
        raise EmptyInputError("training set is empty")
    loss_cfg = cfg.effective_loss()
    mask_spec = MaskSpec(loss_cfg.mask_rate, seed=cfg.seed)
    shuffle_rng = np.random.default_rng([cfg.seed, 0x5EED])
    heads = model.dpg.heads
    params = {n: p.copy() for n, p in model.params().items()}
    state = init_optimizer_state(params, cfg)
    counter = 0
    history = []
    sink = open(metrics_path, "w") if metrics_path is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            sums = np.zeros(3)
            order = shuffle_rng.permutation(len(pairs))
            for b, lo in enumerate(range(0, len(pairs), cfg.batch_size)):
                idx = order[lo:lo + cfg.batch_size]
                masks = []
                for i in idx:
                    masks.append(sample_mask(pairs[i][0].shape[0], mask_spec,
                                             mask_rng(mask_spec, counter)))
                    counter += 1
                batch = TrainingBatch([pairs[i] for i in idx], masks)
                current = TsadpModel.from_params(params, heads)
                lc, lm, total, grads = loss_and_grads(current, batch, loss_cfg)
                if not np.isfinite(total):
                    raise NonFiniteLossError(
                        f"non-finite loss {total} at epoch {epoch}, batch {b + 1}")
                sums += len(idx) * np.array([total, lc, lm])
                params, state = optimizer_step(params, grads, state, cfg)
            mean = sums / len(pairs)
            record = {"epoch": epoch, "loss_total": float(mean[0]),
                      "loss_tcl": float(mean[1]), "loss_mtp": float(mean[2]),
                      "wall_ms": (time.perf_counter() - start) * 1e3}
            history.append(record)
            if sink is not None:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
    finally:
        if sink is not None:
            sink.close()
    return TsadpModel.from_params(params, heads), history
