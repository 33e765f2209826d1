"""Auxiliary particle filters and adaptive particle-marginal Metropolis-Hastings."""

from .errors import (
    ConfigError,
    EvidenceError,
    FitError,
    IngestError,
    PfmcmcError,
    RoundError,
    TotalWeightZero,
    TransformError,
    UnsupportedVariant,
)
from .filters import kalman_loglik, run_filter
from .likelihood import FilterConfig, Target
from .models import DEFAULT_THETA, Dataset, make_model, simulate_data
from .rng import RandomStream
from .samplers import SamplerConfig, run_chain

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EvidenceError",
    "FitError",
    "IngestError",
    "PfmcmcError",
    "RoundError",
    "TotalWeightZero",
    "TransformError",
    "UnsupportedVariant",
    "kalman_loglik",
    "run_filter",
    "FilterConfig",
    "Target",
    "DEFAULT_THETA",
    "Dataset",
    "make_model",
    "simulate_data",
    "RandomStream",
    "SamplerConfig",
    "run_chain",
]
