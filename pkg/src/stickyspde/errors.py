"""Exception hierarchy shared by all modules."""


class StickySPDEError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(StickySPDEError, ValueError):
    """A numeric parameter lies outside its admissible range."""


class ConfigurationError(StickySPDEError, ValueError):
    """A run configuration is inconsistent (grid stability, ordering constraints, ...)."""


class ContractError(StickySPDEError, ValueError):
    """An input violates a documented precondition of an operation."""


class DomainError(StickySPDEError, ValueError):
    """An argument lies outside the domain of a function."""
