"""Empirical-Bayes shrinkage estimates for unbalanced two-way tables."""

from ._core import (
    CellTable,
    HyperParams,
    NumericError,
    ShrinkageFit,
    ValidationError,
    __version__,
    diagnose,
    eta_grid,
    fit,
    fit_report_json,
    marginal_loglik,
    oracle_fit,
    simulate,
    ure_value,
)

__all__ = [
    "CellTable",
    "HyperParams",
    "NumericError",
    "ShrinkageFit",
    "ValidationError",
    "__version__",
    "diagnose",
    "eta_grid",
    "fit",
    "fit_report_json",
    "marginal_loglik",
    "oracle_fit",
    "simulate",
    "ure_value",
]
