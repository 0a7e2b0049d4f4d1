"""Fitting machinery: least squares, ensemble MCMC and the model-specific fits."""

from .lsq import (
    ConvergenceError,
    FitError,
    LSQResult,
    NonIdentifiableError,
    RankDeficientError,
    least_squares,
    numerical_jacobian,
)
from .mcmc import (
    HalfNormal,
    Normal,
    Posterior,
    PriorSpec,
    SamplerStuckError,
    Uniform,
    credible_interval,
    mcmc_sample,
)

__all__ = [
    "ConvergenceError", "FitError", "LSQResult", "NonIdentifiableError",
    "RankDeficientError", "least_squares", "numerical_jacobian",
    "HalfNormal", "Normal", "Posterior", "PriorSpec", "SamplerStuckError",
    "Uniform", "credible_interval", "mcmc_sample",
]
