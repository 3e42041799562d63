"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where a formula is defined."""


class FitError(RuntimeError):
    """An estimator could not produce a result from the supplied data."""


class NumericalError(RuntimeError):
    """A quadrature or root-finding routine failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigurationError(ValueError):
    """Inconsistent model or generator configuration."""


class OutOfModelWarning(UserWarning):
    """A computed parameter left the range where the model is meaningful."""
