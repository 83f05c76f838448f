"""Exception types shared across the package."""


class NerafError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(NerafError, ValueError):
    pass


class DegenerateInputError(NerafError, ValueError):
    """Input is well-formed but carries no usable signal (e.g. zero energy)."""


class InsufficientDecayError(DegenerateInputError):
    """Schroeder curve never reaches the level needed for a decay fit."""

    def __init__(self, message, reached_db=None):
        super().__init__(message)
        self.reached_db = reached_db


class InfiniteClarityError(DegenerateInputError):
    """C50 is unbounded because no energy arrives after 50 ms."""


class FormatError(NerafError):
    """Malformed tensor container on disk."""

    def __init__(self, message, position=None, expected=None, actual=None):
        super().__init__(message)
        self.position = position
        self.expected = expected
        self.actual = actual

    def to_dict(self):
        return {
            "error": type(self).__name__,
            "message": str(self),
            "position": self.position,
            "expected": self.expected,
            "actual": self.actual,
        }


class NaNGradientError(NerafError, FloatingPointError):
    """Raised by the optimizer when a gradient contains NaN or inf."""

    def __init__(self, message, parameters=()):
        super().__init__(message)
        self.parameters = list(parameters)


class ProviderError(NerafError):
    """An RIR provider failed while building a loudness map."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell
