"""Exception types raised across the package."""


class TugOfWarError(Exception):
    """Base class for all package errors."""


class DomainError(TugOfWarError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class PreconditionError(DomainError):
    """A documented precondition (unit vectors, symmetric input, ...) is violated."""


class ExtensionError(DomainError):
    """A grid query fell outside the grid box."""


class MarginError(DomainError):
    """A stencil was requested at a node without the required one-node margin."""


class ConfigurationError(TugOfWarError):
    """A configuration is inconsistent or violates a stability bound."""


class DivergenceError(TugOfWarError):
    """A computation produced non-finite values."""
