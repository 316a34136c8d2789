"""Dense tensors with reverse-mode automatic differentiation.

The operation set is fixed: exactly what a small convolutional classifier
needs (convolution with groups, batch normalization, a handful of
activations, pooling, linear, elementwise arithmetic, channel-broadcast
multiply, and a soft-label cross-entropy loss head). No general
broadcasting -- every op validates the shapes it accepts, which keeps the
backward rules auditable.

Graph representation: each Tensor produced by an op keeps a tuple of
parent Tensors and a closure computing the vector-Jacobian product for
those parents. ``backward`` materializes the reverse topological order,
pushes per-call gradient flow through the closures, and accumulates into
``.grad`` of every tensor that requires grad. Repeated ``backward`` calls
without ``zero_grad`` therefore accumulate exactly (two calls give 2x the
single-call gradients).

Convolution is cross-correlation (no kernel flip). Storage is float32 for
training; the same graph runs in float64 for finite-difference checks.
"""

from __future__ import annotations

import contextlib
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericalError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (eval-mode forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense real array (rank 0-4) with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        elif (dtype is None and arr.dtype == np.float64
              and not isinstance(data, (np.ndarray, np.generic))):
            arr = arr.astype(DEFAULT_DTYPE)  # python scalars/lists default to f32
        if arr.ndim > 4:
            raise DimensionError(f"rank {arr.ndim} tensor not supported (max 4)")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp = None

    @property
    def dims(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() on non-scalar tensor")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _make_result(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    """Wrap an op output, recording the graph edge when grads are on."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def assert_finite(t: Tensor, what: str = "tensor"):
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite values in {what}")


def backward(loss: Tensor):
    """Accumulate dLoss/dT into ``.grad`` of every requires_grad tensor
    reachable from ``loss``. ``loss`` must be scalar."""
    if loss.data.size != 1:
        raise ContractError("backward requires a scalar loss tensor")

    # reverse topological order, iterative to avoid recursion limits
    topo: list[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    # per-call flow so repeated backward() accumulates exactly
    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = flow.get(id(p))
            # rebind instead of in-place add: vjps may return aliased or
            # read-only arrays (e.g. add passes the upstream grad through)
            flow[id(p)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _conv_patches(xp: np.ndarray, kh: int, kw: int, stride: int, h_out: int, w_out: int):
    """View of all kh x kw patches of the padded input: (N,C,kh,kw,H',W')."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    shape = (n, c, kh, kw, h_out, w_out)
    strides = (sn, sc, sh, sw, stride * sh, stride * sw)
    return np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation with grouping.

    x: (N, Cin, H, W); weight: (Cout, Cin/groups, kh, kw); bias: (Cout,).
    groups == Cin with Cout == Cin is the depthwise case; 1x1 kernels with
    groups == 1 the pointwise case.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and weight")
    n, cin, h, w = x.data.shape
    cout, cin_g, kh, kw = weight.data.shape
    if groups < 1 or cin % groups != 0 or cout % groups != 0:
        raise DimensionError(f"groups={groups} incompatible with Cin={cin}, Cout={cout}")
    if cin_g != cin // groups:
        raise DimensionError(
            f"weight expects {cin_g} channels/group, input provides {cin // groups}")
    if bias is not None and bias.data.shape != (cout,):
        raise DimensionError("bias must have shape (Cout,)")
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError(f"non-positive conv output extent {h_out}x{w_out}")

    if padding > 0:
        xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=x.data.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = x.data
    else:
        xp = x.data

    kk = kh * kw
    cg = cin // groups
    cog = cout // groups
    npix = h_out * w_out

    patches = _conv_patches(xp, kh, kw, stride, h_out, w_out)
    # (N, G, Cg*kh*kw, H'*W'), contiguous copy of the strided view
    cols = patches.reshape(n, cin, kk, npix).reshape(n, groups, cg * kk, npix)
    wg = weight.data.reshape(groups, cog, cg * kk)

    out = np.einsum("gok,bgkn->bgon", wg, cols, optimize=True)
    out = out.reshape(n, cout, h_out, w_out)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    parents = [x, weight] + ([bias] if bias is not None else [])

    def vjp(go):
        go_g = go.reshape(n, groups, cog, npix)
        grad_w = np.einsum("bgon,bgkn->gok", go_g, cols, optimize=True)
        grad_w = grad_w.reshape(cout, cg, kh, kw)
        grad_cols = np.einsum("bgon,gok->bgkn", go_g, wg, optimize=True)
        gp = grad_cols.reshape(n, cin, kh, kw, h_out, w_out)
        gx_pad = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gx_pad[:, :, i:i + stride * h_out:stride,
                       j:j + stride * w_out:stride] += gp[:, :, i, j]
        if padding > 0:
            gx = gx_pad[:, :, padding:padding + h, padding:padding + w]
        else:
            gx = gx_pad
        grads = [gx, grad_w]
        if bias is not None:
            grads.append(go.sum(axis=(0, 2, 3)))
        return grads

    return _make_result(out, parents, vjp)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


class RunningStats:
    """Per-channel running mean/var buffers for batch normalization.
    Initialized to mean 0, var 1, so eval before any training step
    normalizes against the unit Gaussian (documented behaviour)."""

    def __init__(self, channels: int, dtype=DEFAULT_DTYPE):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def copy(self) -> "RunningStats":
        rs = RunningStats(self.mean.shape[0], dtype=self.mean.dtype)
        rs.mean = self.mean.copy()
        rs.var = self.var.copy()
        return rs


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: RunningStats,
                mode: str = "train", momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Channel-wise batch normalization over (N, H, W).

    Train mode normalizes by batch statistics (biased variance) and updates
    the running buffers as run <- (1-momentum)*run + momentum*batch; eval
    mode normalizes by the running buffers.
    """
    if x.data.ndim != 4:
        raise DimensionError("batchnorm2d expects 4-D input")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError("gamma/beta must have shape (C,)")
    if eps <= 0:
        raise ContractError("batchnorm eps must be positive")
    if mode not in ("train", "eval"):
        raise ContractError(f"unknown batchnorm mode {mode!r}")

    xd = x.data
    if mode == "train":
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        state.mean = ((1.0 - momentum) * state.mean + momentum * mean).astype(state.mean.dtype)
        state.var = ((1.0 - momentum) * state.var + momentum * var).astype(state.var.dtype)
    else:
        mean = state.mean.astype(xd.dtype)
        var = state.var.astype(xd.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    m = xd.shape[0] * xd.shape[2] * xd.shape[3]

    def vjp(go):
        dgamma = (go * xhat).sum(axis=(0, 2, 3))
        dbeta = go.sum(axis=(0, 2, 3))
        dxhat = go * gamma.data[None, :, None, None]
        if mode == "eval":
            dx = dxhat * inv_std[None, :, None, None]
        else:
            # full derivative through the batch statistics
            sum_dxhat = dxhat.sum(axis=(0, 2, 3))
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))
            dx = (inv_std[None, :, None, None] / m) * (
                m * dxhat
                - sum_dxhat[None, :, None, None]
                - xhat * sum_dxhat_xhat[None, :, None, None]
            )
        return [dx, dgamma, dbeta]

    return _make_result(out, [x, gamma, beta], vjp)


# ---------------------------------------------------------------------------
# activations and elementwise ops
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    mask = x.data > 0

    def vjp(go):
        return [go * mask]

    return _make_result(out, [x], vjp)


def relu6(x: Tensor) -> Tensor:
    out = np.minimum(np.maximum(x.data, 0), 6)
    mask = (x.data > 0) & (x.data < 6)

    def vjp(go):
        return [go * mask]

    return _make_result(out, [x], vjp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def vjp(go):
        return [go * s * (1.0 - s)]

    return _make_result(s, [x], vjp)


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = x.data * s

    def vjp(go):
        return [go * (s + x.data * s * (1.0 - s))]

    return _make_result(out, [x], vjp)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """PReLU with a single learnable negative-side slope."""
    if alpha.data.size != 1:
        raise DimensionError("prelu slope must be a scalar tensor")
    a = alpha.data.reshape(())
    neg = x.data < 0
    out = np.where(neg, a * x.data, x.data)

    def vjp(go):
        dx = go * np.where(neg, a, x.data.dtype.type(1.0))
        da = np.array((go * np.where(neg, x.data, 0.0)).sum(),
                      dtype=alpha.data.dtype).reshape(alpha.data.shape)
        return [dx, da]

    return _make_result(out, [x, alpha], vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def vjp(go):
        return [go, go]

    return _make_result(out, [a, b], vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mul shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data * b.data

    def vjp(go):
        return [go * b.data, go * a.data]

    return _make_result(out, [a, b], vjp)


def mul_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * x.data.dtype.type(c)

    def vjp(go):
        return [go * x.data.dtype.type(c)]

    return _make_result(out, [x], vjp)


def broadcast_mul_channels(x: Tensor, scale: Tensor) -> Tensor:
    """Multiply every (n, c) feature map by a per-sample per-channel scale.
    ``scale`` may be (N, C) or (N, C, 1, 1)."""
    if x.data.ndim != 4:
        raise DimensionError("broadcast_mul_channels expects 4-D input")
    n, c = x.data.shape[:2]
    s = scale.data
    if s.shape == (n, c, 1, 1):
        s2 = s.reshape(n, c)
    elif s.shape == (n, c):
        s2 = s
    else:
        raise DimensionError(f"scale shape {s.shape} incompatible with input {(n, c)}")
    out = x.data * s2[:, :, None, None]

    def vjp(go):
        dx = go * s2[:, :, None, None]
        ds = (go * x.data).sum(axis=(2, 3))
        return [dx, ds.reshape(scale.data.shape)]

    return _make_result(out, [x, scale], vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: (N, C, H, W) -> (N, C, 1, 1)."""
    if x.data.ndim != 4:
        raise DimensionError("global_avg_pool expects 4-D input")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def vjp(go):
        return [np.broadcast_to(go / (h * w), x.data.shape)]

    return _make_result(out, [x], vjp)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"cannot reshape {x.data.shape} to {shape}")
    out = x.data.reshape(shape)

    def vjp(go):
        return [go.reshape(x.data.shape)]

    return _make_result(out, [x], vjp)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map: (N, F) @ (O, F)^T + (O,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError("linear expects 2-D input and weight")
    if x.data.shape[1] != weight.data.shape[1]:
        raise DimensionError(
            f"linear feature mismatch {x.data.shape[1]} vs {weight.data.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.data.shape != (weight.data.shape[0],):
            raise DimensionError("linear bias must have shape (O,)")
        out = out + bias.data

    parents = [x, weight] + ([bias] if bias is not None else [])

    def vjp(go):
        grads = [go @ weight.data, go.T @ x.data]
        if bias is not None:
            grads.append(go.sum(axis=0))
        return grads

    return _make_result(out, parents, vjp)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a (N, K) array (plain numpy, no graph)."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, soft_targets: Tensor) -> Tensor:
    """Mean cross-entropy between row-softmax of logits and soft targets.

    Target rows must sum to 1 within 1e-6 (mixed labels from Mixup/CutMix
    satisfy this by construction). Computed with max subtraction.
    """
    if logits.data.ndim != 2 or logits.data.shape != soft_targets.data.shape:
        raise DimensionError("softmax_cross_entropy expects matching (N, K) tensors")
    row_sums = soft_targets.data.sum(axis=1)
    if not np.all(np.abs(row_sums - 1.0) <= 1e-6):
        worst = float(np.abs(row_sums - 1.0).max())
        raise ContractError(f"soft-target rows must sum to 1 (worst deviation {worst:.3g})")

    n = logits.data.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -(soft_targets.data * logp).sum() / n
    out = np.asarray(loss, dtype=logits.data.dtype)
    probs = np.exp(logp)

    def vjp(go):
        g = go.reshape(())  # scalar upstream
        dlogits = (probs - soft_targets.data) * (g / n)
        dtargets = -logp * (g / n)
        return [dlogits, dtargets]

    return _make_result(out, [logits, soft_targets], vjp)
