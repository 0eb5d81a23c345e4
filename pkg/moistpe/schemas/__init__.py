"""Pydantic schemas package."""

from .config import *
from .reports import *

__all__ = [
    # Config schemas
    "Config",
    "ResolutionConfig",
    "ModelParams",
    "StepperConfig",
    "ForcingConfig",
    "RunConfig",
    "EnsembleConfig",
    "OutputConfig",
    "DimboundConfig",
    "SECTIONS",
    "TERM_NAMES",

    # Report schemas
    "NormReport",
    "IdentityResidual",
    "IdentityReport",
    "BudgetRecord",
    "PairRecord",
    "SqueezeReport",
    "GammaTable",
    "GrowthFit",
    "TrendFit",
    "FailureSummary",
    "TimeseriesRow",
    "TIMESERIES_COLUMNS",
]
