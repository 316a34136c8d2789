"""Parameter-holding layer wrappers around the autodiff ops.

A ``Module`` is a plain container: parameters and sub-modules are found by
scanning instance attributes in insertion order, which makes parameter
naming (used by checkpoints and the optimizer) deterministic. Forward
passes take ``mode`` ("train" | "eval") and, where randomness is involved,
an explicit rng -- there is no hidden global state.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import RunningStats, Tensor
from .errors import ConfigError


class Module:
    def named_parameters(self, prefix: str = ""):
        """Yield (dotted_name, Tensor) for every parameter, depth-first in
        attribute insertion order."""
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix: str = ""):
        """Yield (dotted_name, ndarray) for non-trainable state (BN stats)."""
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, RunningStats):
                yield f"{name}.mean", val.mean
                yield f"{name}.var", val.var
            elif isinstance(val, Module):
                yield from val.named_buffers(f"{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def kaiming_normal(rng: np.random.Generator, shape, fan_out: int, dtype) -> np.ndarray:
    std = math.sqrt(2.0 / fan_out)
    return rng.normal(0.0, std, size=shape).astype(dtype)


class Conv2d(Module):
    """Convolution parameters plus the call configuration (stride, padding,
    groups). Bias off by default: every conv in the model is followed by a
    batch norm."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 bias: bool = False, rng: np.random.Generator | None = None,
                 dtype=ad.DEFAULT_DTYPE):
        if in_channels % groups != 0 or out_channels % groups != 0:
            raise ConfigError(f"groups={groups} must divide both channel counts")
        k = kernel_size
        fan_out = out_channels * k * k // groups
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(
            kaiming_normal(rng, (out_channels, in_channels // groups, k, k), fan_out, dtype),
            requires_grad=True)
        self.bias = None
        if bias:
            self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias,
                         stride=self.stride, padding=self.padding, groups=self.groups)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=ad.DEFAULT_DTYPE):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running = RunningStats(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        return ad.batchnorm2d(x, self.gamma, self.beta, self.running,
                              mode=mode, momentum=self.momentum, eps=self.eps)


ACTIVATION_KINDS = ("relu", "relu6", "silu", "prelu")


class Activation(Module):
    """Registry-style activation; prelu carries its learnable slope."""

    def __init__(self, kind: str, prelu_init: float = 0.25, dtype=ad.DEFAULT_DTYPE):
        if kind not in ACTIVATION_KINDS:
            raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATION_KINDS}")
        self.kind = kind
        if kind == "prelu":
            self.slope = Tensor(np.full(1, prelu_init, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "relu":
            return ad.relu(x)
        if self.kind == "relu6":
            return ad.relu6(x)
        if self.kind == "silu":
            return ad.silu(x)
        return ad.prelu(x, self.slope)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=ad.DEFAULT_DTYPE):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(out_features, in_features)).astype(dtype),
            requires_grad=True)
        self.bias = Tensor(
            rng.uniform(-bound, bound, size=out_features).astype(dtype),
            requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)
