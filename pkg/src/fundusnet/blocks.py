"""Building blocks: squeeze-excite attention, channel/element dropout, the
inverted linear residual block, and the plain residual baseline used by the
ablation ladder.

Block layout (declared here, configurable):
  expand 1x1 conv + BN + act (skipped when expansion == 1)
  -> [dropout site 1]
  -> depthwise 3x3 conv (stride) + BN + act
  -> squeeze-excite
  -> [dropout site 2]
  -> project 1x1 conv + BN, no activation (linear bottleneck)
  -> [dropout site 3]
  -> + input when stride == 1 and channels match.
At most one dropout site is active per block.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .layers import Activation, BatchNorm2d, Conv2d, Linear, Module


class SEBlock(Module):
    """Channel attention: global average pool, bottleneck MLP, sigmoid gate,
    per-channel rescale. Hidden width is max(in_channels // reduction, 4)."""

    def __init__(self, in_channels: int, reduction: int = 12,
                 inner_activation: str = "relu6",
                 rng: np.random.Generator | None = None, dtype=ad.DEFAULT_DTYPE):
        self.in_channels = in_channels
        hidden = max(in_channels // reduction, 4)
        self.fc1 = Linear(in_channels, hidden, rng=rng, dtype=dtype)
        self.act = Activation(inner_activation, dtype=dtype)
        self.fc2 = Linear(hidden, in_channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        n, c = x.data.shape[:2]
        if c != self.in_channels:
            raise DimensionError(f"SE block built for {self.in_channels} channels, got {c}")
        squeezed = ad.reshape(ad.global_avg_pool(x), (n, c))
        gate = ad.sigmoid(self.fc2.forward(self.act.forward(self.fc1.forward(squeezed))))
        return ad.broadcast_mul_channels(x, gate)


class DropoutLayer(Module):
    """Inverted dropout. ``spatial`` zeroes whole channels per sample,
    ``regular`` zeroes individual entries; kept values are scaled by
    1/(1-p) so the train-mode expectation equals the input. Eval mode is
    the identity."""

    def __init__(self, mode: str = "spatial", rate: float = 0.2):
        if mode not in ("spatial", "regular"):
            raise ConfigError(f"unknown dropout mode {mode!r}")
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.mode = mode
        self.rate = rate

    def forward(self, x: Tensor, mode: str = "train",
                rng: np.random.Generator | None = None) -> Tensor:
        if mode == "eval" or self.rate == 0.0:
            return x
        if rng is None:
            raise ConfigError("train-mode dropout needs an explicit rng stream")
        p = self.rate
        scale = x.data.dtype.type(1.0 / (1.0 - p))
        if self.mode == "spatial":
            n, c = x.data.shape[:2]
            keep = (rng.random((n, c)) >= p).astype(x.data.dtype) * scale
            return ad.broadcast_mul_channels(x, Tensor(keep))
        keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) * scale
        return ad.mul(x, Tensor(keep))


class ILRB(Module):
    """Inverted linear residual block with squeeze-excite attention.

    Narrow -> wide -> narrow: the hidden width is exactly
    expansion * in_channels, and there is no activation after the
    projection conv.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 expansion: int = 6, se: bool = True, se_reduction: int = 12,
                 dropout_position: int | None = 3, dropout_rate: float = 0.2,
                 dropout_mode: str = "spatial", activation: str = "relu6",
                 rng: np.random.Generator | None = None, dtype=ad.DEFAULT_DTYPE):
        if stride not in (1, 2):
            raise ConfigError(f"ILRB stride must be 1 or 2, got {stride}")
        if expansion < 1:
            raise ConfigError(f"ILRB expansion must be >= 1, got {expansion}")
        if dropout_position not in (None, 1, 2, 3):
            raise ConfigError(f"dropout position must be 1, 2, 3 or None")

        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.expansion = expansion
        hidden = expansion * in_channels

        self.expand_conv = None
        self.expand_bn = None
        self.expand_act = None
        if expansion > 1:
            self.expand_conv = Conv2d(in_channels, hidden, 1, rng=rng, dtype=dtype)
            self.expand_bn = BatchNorm2d(hidden, dtype=dtype)
            self.expand_act = Activation(activation, dtype=dtype)

        self.dw_conv = Conv2d(hidden, hidden, 3, stride=stride, padding=1,
                              groups=hidden, rng=rng, dtype=dtype)
        self.dw_bn = BatchNorm2d(hidden, dtype=dtype)
        self.dw_act = Activation(activation, dtype=dtype)

        self.se = SEBlock(hidden, reduction=se_reduction, rng=rng, dtype=dtype) if se else None

        self.project_conv = Conv2d(hidden, out_channels, 1, rng=rng, dtype=dtype)
        self.project_bn = BatchNorm2d(out_channels, dtype=dtype)

        self.dropout = None
        self.dropout_position = None
        if dropout_position is not None and dropout_rate > 0.0:
            self.dropout = DropoutLayer(dropout_mode, dropout_rate)
            self.dropout_position = dropout_position

        self.use_skip = stride == 1 and in_channels == out_channels

    def _drop(self, h: Tensor, site: int, mode: str, rng) -> Tensor:
        if self.dropout is not None and self.dropout_position == site:
            return self.dropout.forward(h, mode=mode, rng=rng)
        return h

    def forward(self, x: Tensor, mode: str = "train",
                rng: np.random.Generator | None = None) -> Tensor:
        if x.data.shape[1] != self.in_channels:
            raise DimensionError(
                f"block expects {self.in_channels} channels, got {x.data.shape[1]}")
        h = x
        if self.expand_conv is not None:
            h = self.expand_act.forward(self.expand_bn.forward(self.expand_conv.forward(h), mode))
        h = self._drop(h, 1, mode, rng)
        h = self.dw_act.forward(self.dw_bn.forward(self.dw_conv.forward(h), mode))
        if self.se is not None:
            h = self.se.forward(h)
        h = self._drop(h, 2, mode, rng)
        h = self.project_bn.forward(self.project_conv.forward(h), mode)
        h = self._drop(h, 3, mode, rng)
        if self.use_skip:
            h = ad.add(h, x)
        return h


class PlainResidualBlock(Module):
    """Post-activation residual block (two 3x3 convs): the ablation
    baseline standing in for a conventional residual network. No
    squeeze-excite, no channel expansion, activation after the final add."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 activation: str = "relu", rng: np.random.Generator | None = None,
                 dtype=ad.DEFAULT_DTYPE):
        if stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride=stride, padding=1,
                            rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_channels, dtype=dtype)
        self.act1 = Activation(activation, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 3, padding=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_channels, dtype=dtype)
        self.act2 = Activation(activation, dtype=dtype)

        self.downsample_conv = None
        self.downsample_bn = None
        if stride != 1 or in_channels != out_channels:
            self.downsample_conv = Conv2d(in_channels, out_channels, 1, stride=stride,
                                          rng=rng, dtype=dtype)
            self.downsample_bn = BatchNorm2d(out_channels, dtype=dtype)

    def forward(self, x: Tensor, mode: str = "train",
                rng: np.random.Generator | None = None) -> Tensor:
        h = self.act1.forward(self.bn1.forward(self.conv1.forward(x), mode))
        h = self.bn2.forward(self.conv2.forward(h), mode)
        if self.downsample_conv is not None:
            skip = self.downsample_bn.forward(self.downsample_conv.forward(x), mode)
        else:
            skip = x
        return self.act2.forward(ad.add(h, skip))
