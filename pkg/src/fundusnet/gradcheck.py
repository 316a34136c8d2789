"""Finite-difference verification of every differentiable operation.

Each case builds float64 inputs, reduces the op output to a scalar through
a fixed random weighting, and compares the analytic gradients against
central differences (step 1e-3). The error statistic is
max|analytic - numeric| normalized by the largest gradient magnitude of
the case; the pass threshold is 1e-4.

Rectifier cases nudge their inputs away from the kinks (where a finite
difference straddling the non-differentiable point is meaningless). The
composed-block case runs with the smooth silu activation for the same
reason; the rectifiers' gradients are covered by their own cases, and the
chain through conv/BN/SE/skip is what the composed case verifies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import ILRB

FD_STEP = 1e-3
THRESHOLD = 1e-4


def _nudge(x: np.ndarray, kinks=(0.0,), margin: float = 0.1) -> np.ndarray:
    """Push values that sit within ``margin`` of any kink away from it."""
    out = x.copy()
    for k in kinks:
        near = np.abs(out - k) < margin
        out[near] = k + np.where(out[near] >= k, margin * 2, -margin * 2)
    return out


def numeric_gradient(forward, arr: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar-valued ``forward()`` with
    respect to ``arr``, perturbing it in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    with ad.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = forward()
            flat[i] = orig - h
            f_minus = forward()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2 * h)
    return grad


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    threshold: float = THRESHOLD

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold


def check_case(name: str, build, n_seeds: int = 10, base_seed: int = 0,
               h: float = FD_STEP) -> CaseResult:
    """Run one op case over ``n_seeds`` random shapes/draws.

    ``build(rng)`` returns (inputs: list[Tensor], forward: () -> Tensor)
    where forward recomputes the scalar loss from the current input data.
    """
    worst = 0.0
    for s in range(n_seeds):
        rng = np.random.default_rng(base_seed + s)
        inputs, forward = build(rng)
        for t in inputs:
            t.zero_grad()
        loss = forward()
        ad.backward(loss)
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                    for t in inputs]
        numeric = [numeric_gradient(lambda: float(forward().data), t.data, h=h)
                   for t in inputs]
        scale = max(max((np.abs(a).max() for a in analytic), default=0.0),
                    max((np.abs(n).max() for n in numeric), default=0.0),
                    1e-8)
        err = max(np.abs(a - n).max() for a, n in zip(analytic, numeric)) / scale
        worst = max(worst, err)
    return CaseResult(name, float(worst))


def _t(rng, shape, lo=-1.0, hi=1.0, nudge_kinks=None):
    data = rng.uniform(lo, hi, size=shape)
    if nudge_kinks:
        data = _nudge(data, nudge_kinks)
    return Tensor(data.astype(np.float64), requires_grad=True)


def _weighted(rng, op):
    """Reduce an op to a scalar via a fixed random weighting, built from
    already-verified ops so the reduction itself is differentiated."""
    w_cache = {}

    def forward():
        out = op()
        key = out.data.shape
        if key not in w_cache:
            w_cache[key] = rng.uniform(-1, 1, size=out.data.shape)
        return _dot(out, w_cache[key])
    return forward


def _dot(out: Tensor, weights: np.ndarray) -> Tensor:
    size = out.data.size
    v = ad.reshape(out, (1, 1, 1, size))
    w = Tensor(weights.reshape(1, 1, 1, size).astype(out.data.dtype))
    pooled = ad.global_avg_pool(ad.mul(v, w))
    return ad.mul_scalar(ad.reshape(pooled, ()), float(size))


# ---------------------------------------------------------------------------
# cases
# ---------------------------------------------------------------------------


def _case_conv2d(rng):
    n = int(rng.integers(1, 3))
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 5))
    k = int(rng.choice([1, 3]))
    x = _t(rng, (n, cin, 6, 6))
    w = _t(rng, (cout, cin, k, k))
    b = _t(rng, (cout,))
    pad = k // 2

    def op():
        return ad.conv2d(x, w, b, stride=1, padding=pad, groups=1)
    return [x, w, b], _weighted(rng, op)


def _case_conv2d_depthwise(rng):
    n = int(rng.integers(1, 3))
    c = int(rng.integers(2, 5))
    x = _t(rng, (n, c, 6, 6))
    w = _t(rng, (c, 1, 3, 3))

    def op():
        return ad.conv2d(x, w, None, stride=1, padding=1, groups=c)
    return [x, w], _weighted(rng, op)


def _case_conv2d_strided(rng):
    x = _t(rng, (2, 3, 7, 7))
    w = _t(rng, (4, 3, 3, 3))

    def op():
        return ad.conv2d(x, w, None, stride=2, padding=1, groups=1)
    return [x, w], _weighted(rng, op)


def _case_batchnorm_train(rng):
    c = int(rng.integers(2, 5))
    x = _t(rng, (3, c, 4, 4), lo=-2, hi=2)
    gamma = _t(rng, (c,), lo=0.5, hi=1.5)
    beta = _t(rng, (c,))

    def op():
        state = ad.RunningStats(c, dtype=np.float64)
        return ad.batchnorm2d(x, gamma, beta, state, mode="train")
    return [x, gamma, beta], _weighted(rng, op)


def _case_batchnorm_eval(rng):
    c = int(rng.integers(2, 5))
    x = _t(rng, (2, c, 4, 4), lo=-2, hi=2)
    gamma = _t(rng, (c,), lo=0.5, hi=1.5)
    beta = _t(rng, (c,))
    state = ad.RunningStats(c, dtype=np.float64)
    state.mean = rng.uniform(-0.5, 0.5, c)
    state.var = rng.uniform(0.5, 1.5, c)

    def op():
        return ad.batchnorm2d(x, gamma, beta, state, mode="eval")
    return [x, gamma, beta], _weighted(rng, op)


def _case_relu(rng):
    x = _t(rng, (3, 17), lo=-2, hi=2, nudge_kinks=(0.0,))
    return [x], _weighted(rng, lambda: ad.relu(x))


def _case_relu6(rng):
    x = _t(rng, (3, 17), lo=-3, hi=9, nudge_kinks=(0.0, 6.0))
    return [x], _weighted(rng, lambda: ad.relu6(x))


def _case_silu(rng):
    x = _t(rng, (3, 17), lo=-4, hi=4)
    return [x], _weighted(rng, lambda: ad.silu(x))


def _case_prelu(rng):
    x = _t(rng, (3, 17), lo=-2, hi=2, nudge_kinks=(0.0,))
    a = _t(rng, (1,), lo=0.1, hi=0.4)
    return [x, a], _weighted(rng, lambda: ad.prelu(x, a))


def _case_sigmoid(rng):
    x = _t(rng, (3, 17), lo=-4, hi=4)
    return [x], _weighted(rng, lambda: ad.sigmoid(x))


def _case_global_avg_pool(rng):
    x = _t(rng, (2, 3, 5, 5))
    return [x], _weighted(rng, lambda: ad.global_avg_pool(x))


def _case_linear(rng):
    x = _t(rng, (4, 7))
    w = _t(rng, (3, 7))
    b = _t(rng, (3,))
    return [x, w, b], _weighted(rng, lambda: ad.linear(x, w, b))


def _case_add(rng):
    a = _t(rng, (2, 3, 4, 4))
    b = _t(rng, (2, 3, 4, 4))
    return [a, b], _weighted(rng, lambda: ad.add(a, b))


def _case_mul(rng):
    a = _t(rng, (3, 9))
    b = _t(rng, (3, 9))
    return [a, b], _weighted(rng, lambda: ad.mul(a, b))


def _case_mul_scalar(rng):
    x = _t(rng, (3, 9))
    c = float(rng.uniform(-2, 2))
    return [x], _weighted(rng, lambda: ad.mul_scalar(x, c))


def _case_broadcast_mul_channels(rng):
    x = _t(rng, (2, 4, 5, 5))
    s = _t(rng, (2, 4))
    return [x, s], _weighted(rng, lambda: ad.broadcast_mul_channels(x, s))


def _case_reshape(rng):
    x = _t(rng, (2, 3, 4))
    return [x], _weighted(rng, lambda: ad.reshape(x, (4, 6)))


def _case_softmax_cross_entropy(rng):
    n, k = 4, 5
    logits = _t(rng, (n, k), lo=-2, hi=2)
    raw = rng.uniform(0.05, 1.0, size=(n, k))
    targets = Tensor((raw / raw.sum(axis=1, keepdims=True)).astype(np.float64))

    def forward():
        return ad.softmax_cross_entropy(logits, targets)
    return [logits], forward


def _case_ilrb(rng):
    cin = 3
    block = ILRB(cin, cin, stride=1, expansion=6, se=True, se_reduction=6,
                 dropout_position=None, activation="silu",
                 rng=rng, dtype=np.float64)
    x = _t(rng, (2, cin, 5, 5))
    params = [x] + [p for _, p in block.named_parameters()]

    def op():
        return block.forward(x, mode="train")
    return params, _weighted(rng, op)


# (name, builder, fd step). The composed-block case uses a smaller step:
# the chained normalizations give the loss enough curvature that the h^2
# truncation term of central differences dominates at 1e-3.
CASES = [
    ("conv2d", _case_conv2d, FD_STEP),
    ("conv2d_depthwise", _case_conv2d_depthwise, FD_STEP),
    ("conv2d_strided", _case_conv2d_strided, FD_STEP),
    ("batchnorm2d_train", _case_batchnorm_train, FD_STEP),
    ("batchnorm2d_eval", _case_batchnorm_eval, FD_STEP),
    ("relu", _case_relu, FD_STEP),
    ("relu6", _case_relu6, FD_STEP),
    ("silu", _case_silu, FD_STEP),
    ("prelu", _case_prelu, FD_STEP),
    ("sigmoid", _case_sigmoid, FD_STEP),
    ("global_avg_pool", _case_global_avg_pool, FD_STEP),
    ("linear", _case_linear, FD_STEP),
    ("add", _case_add, FD_STEP),
    ("mul", _case_mul, FD_STEP),
    ("mul_scalar", _case_mul_scalar, FD_STEP),
    ("broadcast_mul_channels", _case_broadcast_mul_channels, FD_STEP),
    ("reshape", _case_reshape, FD_STEP),
    ("softmax_cross_entropy", _case_softmax_cross_entropy, FD_STEP),
    ("ilrb", _case_ilrb, 1e-5),
]


def _case_corrupted(rng):
    """Negative control: an op whose backward is deliberately wrong."""
    x = _t(rng, (3, 9))

    def bad_relu(t):
        out = np.maximum(t.data, 0)
        mask = t.data > 0

        def vjp(go):
            return [go * mask * 1.01]  # 1% too large on purpose
        return ad._make_result(out, [t], vjp)

    xn = Tensor(_nudge(x.data), requires_grad=True)
    return [xn], _weighted(rng, lambda: bad_relu(xn))


def run_suite(n_seeds: int = 10, include_corrupted: bool = False) -> list[CaseResult]:
    cases = list(CASES)
    if include_corrupted:
        cases.append(("corrupted_gradient_fixture", _case_corrupted))
    return [check_case(name, build, n_seeds=n_seeds) for name, build in cases]
