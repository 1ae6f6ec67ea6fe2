"""Learned probabilistic quantizers and mean-fusion estimators for
bandwidth-constrained distributed estimation."""

from .errors import (
    ConfigurationError,
    ContractViolation,
    DistqError,
    EnumerationTooLarge,
    NumericDomainError,
    TrainingDiverged,
)
from .model import NoiseModel, PriorModel, build_dataset_d1, build_dataset_d2, build_obs_grid
from .quantizer import QuantizerSpec
from .bounds import binomial_law, brute_force_mmse, mse_lower_bound, onehot_law, parallel_law, pcrlb_binary
from .fusion import posterior_mean
from .training import TrainingConfig, exact_bound, train_fc, train_quantizer

__version__ = "0.1.0"
