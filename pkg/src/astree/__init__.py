"""Aldous-Shields random binary trees: simulation, exact moments and the
senescence limit curve."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AstreeError,
    ConditioningError,
    ConvergenceError,
    Parameters,
    PathWord,
    Profile,
    SeriesControl,
    Trajectory,
    ValidationError,
    dyadic_mass,
    validate,
)
