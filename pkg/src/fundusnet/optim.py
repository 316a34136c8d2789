"""Optimizers (AdamP, AdamW, Adam, SGD-momentum) and the warmup+cosine
learning-rate schedule.

All step functions mutate parameter arrays in place and share one
``OptState`` (first/second moments, momentum buffers, step counter).
Decay policy: decoupled weight decay (AdamP/AdamW) applies only to
parameters marked decayable -- by default tensors of rank >= 2, i.e. conv
and linear weights, excluding biases and batch-norm affines; Adam and SGD
couple the decay into the gradient.

AdamP additionally projects the adaptive update for parameters whose
gradient is nearly orthogonal to the weight (the scale-invariant case
created by normalization layers): the update loses its radial component
and the decay is dampened by ``wd_ratio``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericalError


@dataclass
class OptState:
    """Per-parameter buffers plus shared hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    delta: float = 0.1        # AdamP projection threshold
    wd_ratio: float = 0.1     # AdamP dampened-decay factor
    nesterov: bool = False
    momentum: float = 0.9     # SGD only
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    buf: dict = field(default_factory=dict)  # SGD momentum buffers

    def moment_arrays(self):
        """(name, array) pairs of every state tensor, for checkpointing."""
        for label, table in (("m", self.m), ("v", self.v), ("buf", self.buf)):
            for name, arr in table.items():
                yield f"{label}.{name}", arr


def _check_grads(named_grads):
    for name, g in named_grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")


def _decayable(param: np.ndarray) -> bool:
    return param.ndim >= 2


def _cosine_rows(a: np.ndarray, b: np.ndarray, eps: float) -> np.ndarray:
    """|cos| between corresponding rows of two equal-shape 2-D views.
    Denominator is max(|a||b|, eps) so the value is exactly invariant to
    positive rescaling of either argument (away from the eps floor)."""
    num = np.abs((a * b).sum(axis=1))
    den = np.maximum(np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1), eps)
    return num / den


def _project(w: np.ndarray, g: np.ndarray, p: np.ndarray,
             delta: float, wd_ratio: float, eps: float):
    """AdamP tangent-space projection.

    Tries the per-output-channel view first (rank > 1), then the
    whole-tensor view. If the largest |cos(w_row, g_row)| is below
    delta/sqrt(row_dim), removes the component of the update along w and
    returns the dampened decay factor; otherwise the update and full decay
    are kept.
    """
    views = []
    if w.ndim > 1:
        views.append((w.shape[0], -1))
    views.append((1, -1))
    for shape in views:
        wv = w.reshape(shape)
        gv = g.reshape(shape)
        cos = _cosine_rows(wv, gv, eps)
        if cos.max() < delta / math.sqrt(wv.shape[1]):
            row_norm = np.linalg.norm(wv, axis=1, keepdims=True) + eps
            w_hat = wv / row_norm
            pv = p.reshape(shape)
            pv = pv - w_hat * (w_hat * pv).sum(axis=1, keepdims=True)
            return pv.reshape(p.shape), wd_ratio
    return p, 1.0


def adamp_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptState) -> None:
    """One AdamP update, in place. With delta == 0 the projection never
    fires and the step is exactly AdamW."""
    named = sorted(params.items())
    _check_grads((n, grads[n]) for n, _ in named)
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, w in named:
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        denom = np.sqrt(v / bc2) + state.eps
        if state.nesterov:
            p = (state.beta1 * m + (1.0 - state.beta1) * g) / (bc1 * denom)
        else:
            p = (m / bc1) / denom
        wd_factor = 1.0
        if w.ndim >= 1 and state.delta > 0:
            p, wd_factor = _project(w, g, p, state.delta, state.wd_ratio, state.eps)
        if state.weight_decay > 0 and _decayable(w):
            w *= 1.0 - state.lr * state.weight_decay * wd_factor
        w -= state.lr * p


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptState) -> None:
    """AdamW: bias-corrected Adam with decoupled weight decay."""
    named = sorted(params.items())
    _check_grads((n, grads[n]) for n, _ in named)
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, w in named:
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        denom = np.sqrt(v / bc2) + state.eps
        p = (m / bc1) / denom
        if state.weight_decay > 0 and _decayable(w):
            w *= 1.0 - state.lr * state.weight_decay
        w -= state.lr * p


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptState) -> None:
    """Plain Adam; weight decay, when set, is coupled (L2 on the gradient)."""
    named = sorted(params.items())
    _check_grads((n, grads[n]) for n, _ in named)
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, w in named:
        g = grads[name]
        if state.weight_decay > 0 and _decayable(w):
            g = g + state.weight_decay * w
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        denom = np.sqrt(v / bc2) + state.eps
        w -= state.lr * (m / bc1) / denom


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             state: OptState) -> None:
    """SGD with heavy-ball momentum and coupled decay."""
    named = sorted(params.items())
    _check_grads((n, grads[n]) for n, _ in named)
    state.t += 1
    for name, w in named:
        g = grads[name]
        if state.weight_decay > 0 and _decayable(w):
            g = g + state.weight_decay * w
        buf = state.buf.setdefault(name, np.zeros_like(w))
        buf *= state.momentum
        buf += g
        w -= state.lr * buf


STEP_FUNCTIONS = {
    "adamp": adamp_step,
    "adamw": adamw_step,
    "adam": adam_step,
    "sgd": sgd_step,
}


class Optimizer:
    """Binds a step function to a model's named parameters."""

    def __init__(self, named_params, algo: str = "adamp", **hyper):
        if algo not in STEP_FUNCTIONS:
            raise ContractError(f"unknown optimizer {algo!r}")
        self.algo = algo
        self.tensors = dict(named_params)
        self.state = OptState(**hyper)

    def step(self):
        params, grads = {}, {}
        for name, tensor in self.tensors.items():
            if tensor.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient; run backward first")
            params[name] = tensor.data
            grads[name] = tensor.grad
        STEP_FUNCTIONS[self.algo](params, grads, self.state)

    def zero_grad(self):
        for tensor in self.tensors.values():
            tensor.zero_grad()


@dataclass
class Schedule:
    """Linear warmup followed by cosine decay to ``min_lr``.

    Warmup epoch e (0-based): lr = base * (e+1) / warmup_epochs, so the
    final warmup epoch runs at exactly the base rate. The cosine phase is
    end-inclusive: the last epoch lands on min_lr exactly.
    """

    base_lr: float
    warmup_epochs: int
    total_epochs: int
    min_lr: float = 0.0

    def validate(self):
        if self.total_epochs < 1:
            raise ContractError("total_epochs must be >= 1")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ContractError("warmup must fit inside the schedule")


def lr_at(schedule: Schedule, epoch: int) -> float:
    schedule.validate()
    if not 0 <= epoch < schedule.total_epochs:
        raise ContractError(
            f"epoch {epoch} outside schedule [0, {schedule.total_epochs})")
    if epoch < schedule.warmup_epochs:
        return schedule.base_lr * (epoch + 1) / schedule.warmup_epochs
    span = schedule.total_epochs - 1 - schedule.warmup_epochs
    if span <= 0:
        # degenerate single cosine epoch: it is also the final epoch
        return schedule.min_lr
    phase = math.pi * (epoch - schedule.warmup_epochs) / span
    return schedule.min_lr + 0.5 * (schedule.base_lr - schedule.min_lr) * (1.0 + math.cos(phase))
