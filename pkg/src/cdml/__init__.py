"""Conditional debiased machine learning: cross-fitted debiased outcomes
smoothed by locally linear regression."""

__version__ = "0.1.0"

from .core import Dataset, FoldAssignment, Kernel, dataset_from_columns, make_folds, read_csv_columns  # noqa: E402
from .moments import MomentFunctional  # noqa: E402
from .learners import Dictionary, FittedFunction, fit_lasso, fit_logistic, fit_quantile, fit_ridge  # noqa: E402
from .riesz import RieszEstimate, fit_auto_riesz, fit_auto_riesz_weighted, plugin_alpha  # noqa: E402
from .llreg import LocalLinearCurve, fit_local_linear, select_bandwidth  # noqa: E402
from .config import EstimateConfig, LearnerConfig, LLRConfig, RieszConfig  # noqa: E402
from .engine import construct_debiased_outcomes, estimate_theta, oracle_theta  # noqa: E402

__all__ = [
    "Dataset",
    "FoldAssignment",
    "Kernel",
    "MomentFunctional",
    "Dictionary",
    "FittedFunction",
    "RieszEstimate",
    "LocalLinearCurve",
    "EstimateConfig",
    "LearnerConfig",
    "LLRConfig",
    "RieszConfig",
    "dataset_from_columns",
    "read_csv_columns",
    "make_folds",
    "fit_ridge",
    "fit_lasso",
    "fit_logistic",
    "fit_quantile",
    "fit_auto_riesz",
    "fit_auto_riesz_weighted",
    "plugin_alpha",
    "fit_local_linear",
    "select_bandwidth",
    "construct_debiased_outcomes",
    "estimate_theta",
    "oracle_theta",
]
