"""Macro-block dropout for recurrent networks, with a numpy LSTM test bed."""

from .dropout import (
    DropoutConfig,
    DropoutTrace,
    Method,
    Mode,
    PartitionDims,
    Scaling,
    baseline_dropout_forward,
    dynamic_scale,
    macro_block_dropout_backward,
    macro_block_dropout_forward,
    make_block_mask,
)
from .stats import gaussian_approximation, kept_ratio_moments, kept_ratio_pmf, monte_carlo_kept_ratio
from .tensor import Rng, bernoulli

__version__ = "0.1.0"
