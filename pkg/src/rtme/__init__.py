"""Regularly truncated M-estimators for learning with noisy labels."""

from rtme.errors import ConfigError, FormatError, InputError, NumericError
from rtme.estimators import EstimatorSpec, Mode, batch_weights, epoch_mode, phi, phi_truncated, weight, weight_truncated
from rtme.threshold import AdaptConfig, adapt_parameter, perturb_sigma, select_small_loss, three_sigma_threshold

__all__ = [
    "AdaptConfig",
    "ConfigError",
    "EstimatorSpec",
    "FormatError",
    "InputError",
    "Mode",
    "NumericError",
    "adapt_parameter",
    "batch_weights",
    "epoch_mode",
    "perturb_sigma",
    "phi",
    "phi_truncated",
    "select_small_loss",
    "three_sigma_threshold",
    "weight",
    "weight_truncated",
]

__version__ = "0.1.0"
