"""Exception hierarchy shared by all solver modules."""


class EpictrlError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(EpictrlError):
    """Invalid artifact configuration: bad dimensions, sizes, shapes, or scheme constraints."""


class ValidationError(ConfigurationError):
    """A modelling assumption on the scenario data is violated.

    Carries the name of the violated assumption so callers (and the CLI) can
    report exactly which requirement failed.
    """

    def __init__(self, assumption: str, message: str):
        super().__init__(message)
        self.assumption = assumption


class ModelAssumptionError(ValidationError):
    """A coefficient field leaves the admissible range (e.g. diffusion bounds)."""


class PreconditionError(EpictrlError):
    """An operation was invoked on inputs that violate its stated preconditions."""


class NumericalError(EpictrlError):
    """A linear solve or time step failed numerically.

    ``residual`` holds the offending residual norm when one is available.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class FormatError(EpictrlError):
    """A snapshot or table file does not match the documented format."""
