"""Model assembly from a declarative configuration.

A model is: stem (3x3 conv, stride 2) -> stack of residual blocks described
by a block table -> head (1x1 conv, BN, act, global pool, dropout, linear).
Two block tables ship by default:

  ``mbv2``        the classic (expansion, channels, repeats, stride) table
                  with expansion 1 for the first block and 6 elsewhere;
  ``rexnet-lin``  16 single-repeat blocks whose output channels follow a
                  linear ramp 16 -> 180, with stride-2 blocks placed so the
                  network downsamples five times including the stem.

Channel counts scale with ``width_multiplier`` by rounding to the nearest
multiple of 8 with a floor of 8; at multiplier 1.0 the declared table is
used verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import ILRB, DropoutLayer, PlainResidualBlock
from .errors import ConfigError, DimensionError
from .layers import Activation, BatchNorm2d, Conv2d, Linear, Module


@dataclass
class BlockSpec:
    expansion: int
    out_channels: int
    repeats: int = 1
    first_stride: int = 1
    se: bool = True
    dropout_position: int | None = 3
    dropout_rate: float = 0.2

    def validate(self):
        if self.repeats < 1:
            raise ConfigError("block repeats must be >= 1")
        if self.first_stride not in (1, 2):
            raise ConfigError("block stride must be 1 or 2")
        if self.expansion < 1:
            raise ConfigError("block expansion must be >= 1")
        if self.out_channels < 1:
            raise ConfigError("block channels must be >= 1")


# (expansion, channels, repeats, first stride)
_MBV2_ROWS = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
]

# stage layout: repeats per stage / stride of each stage's first block
_REXNET_STAGE_REPEATS = [1, 2, 2, 3, 3, 5]
_REXNET_STAGE_STRIDES = [1, 2, 2, 2, 1, 2]


def make_table(name: str, dropout_position: int | None = 3,
               dropout_rate: float = 0.2, se: bool = True) -> list[BlockSpec]:
    """Instantiate a named block table with uniform dropout/SE settings."""
    if name == "mbv2":
        return [
            BlockSpec(t, c, n, s, se=se, dropout_position=dropout_position,
                      dropout_rate=dropout_rate)
            for (t, c, n, s) in _MBV2_ROWS
        ]
    if name == "rexnet-lin":
        total = sum(_REXNET_STAGE_REPEATS)
        channels = [int(round(16 + (180 - 16) * i / (total - 1))) for i in range(total)]
        table = []
        i = 0
        for reps, stride in zip(_REXNET_STAGE_REPEATS, _REXNET_STAGE_STRIDES):
            for r in range(reps):
                table.append(BlockSpec(
                    expansion=1 if i == 0 else 6,
                    out_channels=channels[i],
                    repeats=1,
                    first_stride=stride if r == 0 else 1,
                    se=se,
                    dropout_position=dropout_position,
                    dropout_rate=dropout_rate,
                ))
                i += 1
        return table
    raise ConfigError(f"unknown block table {name!r} (expected 'mbv2' or 'rexnet-lin')")


@dataclass
class ModelConfig:
    num_classes: int
    block_table: list[BlockSpec] = field(default_factory=lambda: make_table("mbv2"))
    stem_channels: int = 32
    width_multiplier: float = 1.0
    head_channels: int = 1280
    activation: str = "relu6"
    block_kind: str = "ilrb"  # ilrb | plain_residual
    se_reduction: int = 12
    dropout_mode: str = "spatial"
    head_dropout_rate: float = 0.2

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.block_kind not in ("ilrb", "plain_residual"):
            raise ConfigError(f"unknown block kind {self.block_kind!r}")
        if self.width_multiplier <= 0:
            raise ConfigError("width multiplier must be positive")
        if not self.block_table:
            raise ConfigError("block table must not be empty")
        for spec in self.block_table:
            spec.validate()


def scale_channels(channels: int, multiplier: float) -> int:
    """Nearest multiple of 8, floor 8; identity at multiplier 1."""
    if multiplier == 1.0:
        return channels
    return max(8, int(round(channels * multiplier / 8.0)) * 8)


class Model(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype=ad.DEFAULT_DTYPE):
        config.validate()
        wm = config.width_multiplier
        act = config.activation

        stem_ch = scale_channels(config.stem_channels, wm)
        self.stem_conv = Conv2d(3, stem_ch, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm2d(stem_ch, dtype=dtype)
        self.stem_act = Activation(act, dtype=dtype)

        blocks = []
        in_ch = stem_ch
        for spec in config.block_table:
            out_ch = scale_channels(spec.out_channels, wm)
            for r in range(spec.repeats):
                stride = spec.first_stride if r == 0 else 1
                if config.block_kind == "ilrb":
                    blocks.append(ILRB(
                        in_ch, out_ch, stride=stride, expansion=spec.expansion,
                        se=spec.se, se_reduction=config.se_reduction,
                        dropout_position=spec.dropout_position,
                        dropout_rate=spec.dropout_rate,
                        dropout_mode=config.dropout_mode,
                        activation=act, rng=rng, dtype=dtype))
                else:
                    blocks.append(PlainResidualBlock(
                        in_ch, out_ch, stride=stride, activation=act,
                        rng=rng, dtype=dtype))
                in_ch = out_ch
        self.blocks = blocks

        head_ch = scale_channels(config.head_channels, wm)
        self.head_conv = Conv2d(in_ch, head_ch, 1, rng=rng, dtype=dtype)
        self.head_bn = BatchNorm2d(head_ch, dtype=dtype)
        self.head_act = Activation(act, dtype=dtype)
        self.head_dropout = DropoutLayer("regular", config.head_dropout_rate)
        self.classifier = Linear(head_ch, config.num_classes, rng=rng, dtype=dtype)

        self.config = config

    def forward(self, x: Tensor, mode: str = "train",
                rng: np.random.Generator | None = None) -> Tensor:
        """Run the network; returns (N, num_classes) logits."""
        if x.data.ndim != 4 or x.data.shape[1] != 3:
            raise DimensionError("model expects (N, 3, H, W) input")
        h = self.stem_act.forward(self.stem_bn.forward(self.stem_conv.forward(x), mode))
        for block in self.blocks:
            h = block.forward(h, mode=mode, rng=rng)
        h = self.head_act.forward(self.head_bn.forward(self.head_conv.forward(h), mode))
        h = ad.global_avg_pool(h)
        h = ad.reshape(h, (h.data.shape[0], h.data.shape[1]))
        h = self.head_dropout.forward(h, mode=mode, rng=rng)
        return self.classifier.forward(h)


def build_model(config: ModelConfig, rng: np.random.Generator,
                dtype=ad.DEFAULT_DTYPE) -> Model:
    """Construct a model with deterministic initialization from ``rng``:
    Kaiming fan-out normals for convolutions, unit/zero batch-norm affine,
    uniform +-1/sqrt(fan_in) linear layers."""
    return Model(config, rng, dtype=dtype)


def count_params(model: Model) -> int:
    """Exact count of trainable scalars (running stats excluded)."""
    return sum(p.data.size for _, p in model.named_parameters())
