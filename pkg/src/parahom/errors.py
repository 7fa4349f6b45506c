"""Exception types shared across modules.

``ValueError`` subclasses signal bad input (CLI exit code 2); ``SolverError``
signals a numerical failure (exit code 3).
"""


class GridError(ValueError):
    """Grid shape, resolution or compatibility problem."""


class ResolutionError(GridError):
    """A scale-resolving guard was violated."""


class SolverError(RuntimeError):
    """An iterative solve or fixed-point iteration failed to converge."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class RegimeError(ValueError):
    """The coefficient lacks the smoothness a homogenization regime needs."""


class DegenerateFitError(ValueError):
    """Too few data points for a convergence-rate fit."""
