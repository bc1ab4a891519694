"""Bayesian factor analysis with clustered loading rows for redundant-variable detection."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DataMatrix,
    Hyperparameters,
    Partition,
    SamplerState,
    covariance_to_correlation,
    expand_loadings,
    log_likelihood,
    log_posterior_unnorm,
    log_prior,
    model_covariance,
)
from .sampler import SamplerConfig, point_estimates, run_chain  # noqa: E402
from .selection import greedy_search, initialize_kg  # noqa: E402
