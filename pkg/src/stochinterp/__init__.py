"""Stochastic interpolants: transport between densities with ODE and SDE generative models."""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateWeight, DivideByZeroBeta, EmptySource, IllConditioned,
                     InvalidCombination, MissingScore, NonFinite, NumericalError, SingularCovariance,
                     SingularGamma, StepUnderflow, StochInterpError, ZeroDensity)
from .gmm_oracle import GaussianMixture
from .schedules import Kind, Schedule, gg_product, make_schedule, validate

__all__ = [
    "ConfigError", "DegenerateWeight", "DivideByZeroBeta", "EmptySource", "GaussianMixture", "IllConditioned",
    "InvalidCombination", "Kind", "MissingScore", "NonFinite", "NumericalError", "Schedule", "SingularCovariance",
    "SingularGamma", "StepUnderflow", "StochInterpError", "ZeroDensity", "gg_product", "make_schedule", "validate",
]
