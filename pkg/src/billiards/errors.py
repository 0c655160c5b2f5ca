"""Exception hierarchy shared by all modules."""


class BilliardError(Exception):
    pass


class DomainError(BilliardError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GeometryError(BilliardError):
    """The boundary is not strictly convex, or a chord degenerates."""


class GlancingError(GeometryError):
    """Reflection angle too close to 0 or pi to be stepped reliably."""


class NumericError(BilliardError, RuntimeError):
    """A solver or quadrature failed to reach its tolerance."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConfigError(BilliardError):
    """Invalid experiment configuration."""
