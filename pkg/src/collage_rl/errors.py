"""Exception types shared across the package."""


class CollageError(Exception):
    """Base class for all collage_rl errors."""


class InvalidInputError(CollageError, ValueError):
    pass


class InvalidActionError(CollageError, ValueError):
    pass


class PhaseError(InvalidActionError):
    """An action was issued in the wrong phase (layout vs detail)."""


class EmptyContentError(CollageError, ValueError):
    pass


class ConfigError(CollageError, ValueError):
    pass


class InvalidMaskError(CollageError, ValueError):
    pass


class NumericError(CollageError, ArithmeticError):
    """Non-finite values appeared in a forward or backward pass."""
