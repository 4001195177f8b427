"""Bivariate varying-coefficient Cox models for competing risks."""

from ._core import (
    ConvergenceError,
    Fit,
    NumericalError,
    ValidationError,
    fit,
    quadform_tail,
    run_cli,
    simulate,
)

__all__ = [
    "ConvergenceError",
    "Fit",
    "NumericalError",
    "ValidationError",
    "fit",
    "quadform_tail",
    "run_cli",
    "simulate",
]
