"""Exception types raised across the package."""


class HomogError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HomogError, ValueError):
    """Invalid problem data (non-elliptic symbol, indefinite coefficient, bad config)."""


class ResolutionError(HomogError, ValueError):
    """The mesh does not resolve the requested scale."""


class DomainError(HomogError, ValueError):
    """A function was evaluated outside the region where it is defined."""


class DiscretizationError(HomogError, RuntimeError):
    """A discrete identity that should hold exactly failed beyond tolerance."""


class SolverError(HomogError, RuntimeError):
    """An iterative solve stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
