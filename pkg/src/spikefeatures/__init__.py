"""Variational Bayesian discovery of binary, time-varying stimulus features
from event-count observations."""

__version__ = "0.1.0"

from .config import ModelConfig, PriorConfig, config_from_dict, load_config
from .data import ObservationSet, build_observation_set
from .engine import FitResult, compute_elbo, expected_rate, fit, init_posteriors
from .errors import DataValidationError, NumericalStateError
from .estimator import SpikeFeatureModel
from .metrics import match_features, normalized_mutual_info, predicted_rates, unused_features
from .synthetic import GeneratorConfig, GroundTruth, generate

__all__ = [
    "__version__",
    "ModelConfig",
    "PriorConfig",
    "config_from_dict",
    "load_config",
    "ObservationSet",
    "build_observation_set",
    "FitResult",
    "compute_elbo",
    "expected_rate",
    "fit",
    "init_posteriors",
    "DataValidationError",
    "NumericalStateError",
    "SpikeFeatureModel",
    "match_features",
    "normalized_mutual_info",
    "predicted_rates",
    "unused_features",
    "GeneratorConfig",
    "GroundTruth",
    "generate",
]
