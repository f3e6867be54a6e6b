"""Exception hierarchy shared by every module."""


class RabcError(Exception):
    """Base class for all errors raised by the package."""


class ConfigurationError(RabcError, ValueError):
    """Invalid hyperparameters, shapes or experiment settings.

    ``field`` names the offending configuration entry when one is known.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DomainError(RabcError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateSummaryError(RabcError, ArithmeticError):
    """A summary statistic is undefined for the supplied data."""


class EstimationError(RabcError, RuntimeError):
    """A numerical optimiser failed; ``best`` carries the best point found."""

    def __init__(self, message, best=None, value=None):
        super().__init__(message)
        self.best = best
        self.value = value


class ScoreError(RabcError, ArithmeticError):
    """The auxiliary log-likelihood was not finite on a difference stencil."""


class AdjustmentError(RabcError, ArithmeticError):
    """Regression adjustment could not be computed (rank deficient design)."""


class RunError(RabcError, RuntimeError):
    """A sampler could not produce a usable particle population."""


class TuningError(RabcError, ValueError):
    """Too few particles to estimate a proposal covariance."""


class IngestionError(RabcError, ValueError):
    """A user supplied data file could not be read."""
