"""Stacked Bayesian inference for spatiotemporal matrix-variate dynamic linear models."""

__version__ = "0.1.0"

from .data import SpatioTemporalDataset
from .dlm import FilterState, Prior, SystemMatrices, default_prior, filter_step
from .engine import (CandidateModel, FitResult, ModelGrid, PosteriorDraws, ffbs, forecast,
                     parallel_forward_filter, spatial_predict, update_fit, weighted_backward_sample)
from .errors import (ConfigError, DataError, DynstackError, NoConvergence, NotPositiveDefinite,
                     NumericError)
from .simulate import (GeneratorSpec, generate_dataset, metrics, run_mclosed, run_mopen,
                       weights_dynamics_experiment)
from .spatial import LocationSet
from .stacking import WeightTrace

__all__ = [
    "CandidateModel", "ConfigError", "DataError", "DynstackError", "FilterState", "FitResult",
    "GeneratorSpec", "LocationSet", "ModelGrid", "NoConvergence", "NotPositiveDefinite", "NumericError",
    "PosteriorDraws", "Prior", "SpatioTemporalDataset", "SystemMatrices", "WeightTrace",
    "default_prior", "ffbs", "filter_step", "forecast", "generate_dataset", "metrics",
    "parallel_forward_filter", "run_mclosed", "run_mopen", "spatial_predict", "update_fit",
    "weighted_backward_sample", "weights_dynamics_experiment",
]
