"""Exception hierarchy shared across the package."""


class CoevnetError(Exception):
    """Base class for all package errors."""


class ConfigError(CoevnetError):
    """Invalid experiment configuration; carries the offending field name."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ModelError(CoevnetError):
    """A model definition or model evaluation is invalid."""


class IntegrationError(CoevnetError):
    """Time stepping produced an invalid state (NaN/Inf or large negativity)."""


class InvariantViolation(CoevnetError):
    """A structural invariant failed at runtime."""


class NullclineNotFound(ModelError):
    """The weight equation has no root in the search bracket."""


class ConsensusBoundary(CoevnetError):
    """A closure state reached the consensus boundary (rho_+ * rho_- ~ 0)."""


class ClosureSingular(CoevnetError):
    """A closure denominator (single-particle marginal) vanished."""


class ContinuationFailed(CoevnetError):
    """Newton continuation of the stationary branch did not converge."""
