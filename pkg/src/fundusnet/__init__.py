"""fundusnet: a compact NumPy deep-learning stack for retinal image
grading experiments -- channel-attentive inverted residual networks, heavy
augmentation recipes, projection-aware adaptive optimizers, and ordinal
grading metrics, all verifiable by brute-force oracles and finite
differences."""

from . import (augment, autodiff, blocks, checkpoint, config, data, gradcheck,
               imageops, layers, metrics, model, optim, seeding)
from .autodiff import Tensor, backward, no_grad
from .errors import (CompatibilityError, ConfigError, ContractError, DataError,
                     DimensionError, FormatError, FundusnetError,
                     NumericalError, UndefinedMetricError)

__version__ = "0.1.0"
