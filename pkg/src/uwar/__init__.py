"""Wishart autoregressive stochastic volatility: filtering, estimation and diagnostics."""

__version__ = "0.1.0"

from uwar.kernels import BACKEND
from uwar.filter import (
    Hyperparams,
    LambdaPolicy,
    ReturnSeries,
    RunOutput,
    filter_run,
    make_hyperparams,
)
from uwar.estimator import ARPrior, RefitSchedule, estimate_mode, fit_sequential
from uwar.diagnostics import PortfolioConfig, diagnose, log_posterior_from_run, portfolio_run

__all__ = [
    "__version__",
    "BACKEND",
    "Hyperparams",
    "LambdaPolicy",
    "ReturnSeries",
    "RunOutput",
    "filter_run",
    "make_hyperparams",
    "ARPrior",
    "RefitSchedule",
    "estimate_mode",
    "fit_sequential",
    "PortfolioConfig",
    "diagnose",
    "log_posterior_from_run",
    "portfolio_run",
]
