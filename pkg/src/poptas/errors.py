"""Exception hierarchy shared by all modules."""


class PoptaError(Exception):
    """Base class for every error raised by this package."""


class ModelError(PoptaError, ValueError):
    """A model or argument violates a structural contract."""


class ImpossibleObservationError(PoptaError, ValueError):
    """Belief update requested for an observation of probability zero."""


class CapacityError(PoptaError, RuntimeError):
    """A configured size limit (grid points, states, nodes) was exceeded."""


class StrategyBudgetError(CapacityError):
    """Belief exploration exceeded its node budget."""


class DivergingValueError(PoptaError, RuntimeError):
    """An expected-reward value would be infinite."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ParseError(PoptaError, ValueError):
    """Syntax or reference error in model or property text."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{line}:{column}: {message}"
        super().__init__(message)


class PropertyError(PoptaError, ValueError):
    """A property cannot be checked against the given model."""
