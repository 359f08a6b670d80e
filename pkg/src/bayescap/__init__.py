"""Bayesian covariate-assisted principal regression for many covariance matrices."""

from .errors import (
    BayesCapError,
    CandidateFitError,
    DegenerateInputError,
    DivergenceError,
    DomainError,
    InitializationError,
    NumericError,
    ParseError,
    ValidationError,
)
from .ingest import effective_sample_size, load, thin, write
from .model import (
    ExpandedState,
    Hyperparameters,
    TimeSeriesDataset,
    WhitenedDataset,
    grad_log_posterior,
    log_posterior,
    log_posterior_terms,
    whiten,
)
from .sampler import (
    HmcConfig,
    PosteriorDraws,
    PosteriorSummary,
    align,
    fit,
    order_components,
    read_draws,
    summarize,
    write_draws,
)
from .selection import DfdReport, log_dfd, posterior_mean_dfd, select_d
from .simulate import SimTruth, simulate_null, simulate_p5, simulate_scenario, true_tangent_intercept

__version__ = "0.1.0"
