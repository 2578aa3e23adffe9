"""Exact gradients of the joint objective and a finite-difference check.

Masked-prediction targets are constants: the gradient of the masked loss
flows only through the predicted embeddings. :func:`finite_diff_grad`
follows the same convention by capturing the targets once at the
unperturbed weights and reusing them for every perturbed evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dpg
from .errors import EmptyInputError
from .model import PARAM_NAMES, TrainingBatch, TsadpModel, clean_targets, \
    forward_groups, forward_losses, reduce_losses
from .objectives import LossConfig, contrastive_backward

GradBundle = dict  # parameter name -> gradient array, in PARAM_NAMES order


def zero_grads(model: TsadpModel) -> GradBundle:
    return {n: np.zeros_like(p) for n, p in model.params().items()}


def backward(model: TsadpModel, batch: TrainingBatch, cfg: LossConfig,
             targets: list[np.ndarray] | None = None) -> tuple[float, GradBundle]:
    """Total loss and its gradient with respect to every model parameter."""
    _, _, total, grads = loss_and_grads(model, batch, cfg, targets)
    return total, grads


def loss_and_grads(model: TsadpModel, batch: TrainingBatch, cfg: LossConfig,
                   targets: list[np.ndarray] | None = None):
    """``(lc, lm, total, grads)`` from a single forward/backward pass."""
    if len(batch) == 0:
        raise EmptyInputError("batch contains no sequences")
    n = len(batch)
    passes = forward_groups(model, batch, cfg, targets)
    lc, lm, total = reduce_losses(passes, n, cfg)
    grads = zero_grads(model)
    flat = lambda z: z.reshape(-1, z.shape[-1])

    for g in passes:
        b = len(g.members)
        # contrastive branch
        d_zv, d_zl = contrastive_backward(np.full(b, cfg.lambda1 / n), cfg.tau,
                                          g.tcl_cache, cfg.symmetric)
        grads["u_l"] += flat(d_zl).T @ flat(g.language)
        grads["u_v"] += flat(d_zv).T @ flat(g.prompts)
        dpg_grads, _ = dpg.backward_batch(d_zv @ model.u_v, model.dpg, g.clean_cache)
        for name, value in dpg_grads.items():
            grads[name] += value

        # masked-prediction branch; residual is already zero off the mask
        d_zhat = (2.0 * cfg.lambda2 / n) * g.residual
        grads["predictor"] += flat(d_zhat).T @ flat(g.corrupt_prompts)
        dpg_grads, d_x = dpg.backward_batch(d_zhat @ model.predictor, model.dpg,
                                            g.corrupt_cache)
        for name, value in dpg_grads.items():
            grads[name] += value
        grads["mask_token"] += np.sum(d_x[g.mask], axis=0)
    return lc, lm, total, grads


def central_difference(func, x, epsilon: float = 1e-6) -> np.ndarray:
    """Gradient of scalar ``func`` at array ``x`` by central differences.

    Coordinates are perturbed one at a time in C order; ``x`` keeps its dtype.
    """
    x = np.array(x)
    step = np.asarray(epsilon, dtype=x.dtype)
    grad = np.zeros(x.shape)
    for index in np.ndindex(x.shape):
        x0 = x[index]
        x[index] = x0 + step
        f_plus = func(x)
        x[index] = x0 - step
        f_minus = func(x)
        x[index] = x0
        grad[index] = (f_plus - f_minus) / (2 * step)
    return grad


def finite_diff_grad(model: TsadpModel, batch: TrainingBatch, cfg: LossConfig,
                     epsilon: float = 1e-6, dtype=np.longdouble) -> GradBundle:
    """Central differences of the total loss for every model parameter.

    Each loss evaluation runs with the weights cast to ``dtype``. The default
    extended precision keeps the rounding noise of ``f(x+e) - f(x-e)`` far
    below the gradients being checked; with ``dtype=np.float64`` that noise
    sits around 1e-8 absolute, which swamps coordinates whose gradient is
    near 1e-4.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    heads = model.dpg.heads
    params = {n: p.astype(dtype) for n, p in model.params().items()}
    targets = clean_targets(TsadpModel.from_params(params, heads), batch, cfg.k)
    grads = {}
    for name, value in params.items():
        def loss_at(x, name=name):
            trial = dict(params)
            trial[name] = x
            return forward_losses(TsadpModel.from_params(trial, heads), batch, cfg, targets)[2]
        grads[name] = central_difference(loss_at, value, epsilon)
    return grads


@dataclass
class ParamCheck:
    name: str
    max_abs_error: float
    max_rel_error: float
    argmax: tuple


@dataclass
class GradCheckReport:
    params: list[ParamCheck]
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.max_rel_error <= self.tolerance

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    def to_record(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_rel_error": self.max_rel_error,
            "params": [{"name": p.name, "max_abs_error": p.max_abs_error,
                        "max_rel_error": p.max_rel_error, "argmax": list(p.argmax)}
                       for p in self.params],
        }

    def table(self) -> str:
        lines = [f"{'parameter':<12} {'max abs err':>12} {'max rel err':>12}  argmax"]
        for p in self.params:
            lines.append(f"{p.name:<12} {p.max_abs_error:12.3e} {p.max_rel_error:12.3e}  {p.argmax}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:g})")
        return "\n".join(lines)


def compare_grads(analytic: GradBundle, numeric: GradBundle, tolerance: float) -> GradCheckReport:
    """Per-parameter error summary; relative error is ``|a-n| / max(|a|, |n|, 1e-8)``."""
    checks = []
    for name in PARAM_NAMES:
        a = np.asarray(analytic[name])
        n = np.asarray(numeric[name])
        abs_err = np.abs(a - n)
        rel_err = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        if rel_err.size:
            worst = np.unravel_index(int(np.argmax(rel_err)), rel_err.shape)
            checks.append(ParamCheck(name, float(abs_err.max()), float(rel_err.max()),
                                     tuple(int(i) for i in worst)))
        else:
            checks.append(ParamCheck(name, 0.0, 0.0, ()))
    return GradCheckReport(checks, tolerance)


def gradcheck(model: TsadpModel, batch: TrainingBatch, cfg: LossConfig,
              epsilon: float = 1e-6, tolerance: float = 1e-5,
              analytic: GradBundle | None = None) -> GradCheckReport:
    """Compare :func:`backward` against :func:`finite_diff_grad`.

    ``analytic`` may be supplied to audit a gradient from elsewhere (or a
    deliberately damaged one).
    """
    if not tolerance > 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")
    if analytic is None:
        _, analytic = backward(model, batch, cfg)
    numeric = finite_diff_grad(model, batch, cfg, epsilon)
    return compare_grads(analytic, numeric, tolerance)
