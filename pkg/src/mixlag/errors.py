"""Exception hierarchy used across the package."""


class MixlagError(Exception):
    """Base class for all library errors."""


class UsageError(MixlagError, ValueError):
    """Invalid arguments or inconsistent inputs."""


class DomainError(UsageError):
    """A point lies outside the domain of a velocity field."""


class NumericError(MixlagError, ArithmeticError):
    """Non-finite, singular or non-SPD numerical data."""


class IntegrationError(MixlagError):
    """A trajectory left the domain during flow-map integration."""


class SolverError(MixlagError):
    """An iterative or direct linear solve failed.

    Parameters
    ----------
    message : str
        Human readable description.
    residual : float, optional
        Last relative residual reached by the solver.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(SolverError):
    """An eigen/singular iteration did not converge within its cap."""


class ContractionError(SolverError):
    """A computed singular value exceeded one, which signals a solver bug."""


class EstimationError(MixlagError):
    """Not enough usable data to fit a convergence order."""


class ConfigError(UsageError):
    """Invalid experiment configuration."""
