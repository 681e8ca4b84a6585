"""Exception types raised across the package."""


class AlfaError(Exception):
    """Base class for all errors raised by :mod:`alfa`."""


class DegenerateBox(AlfaError, ValueError):
    """Box with zero/negative extent, negative or non-finite coordinates."""


class InvalidScores(AlfaError, ValueError):
    """Class-score tuple that is not a probability distribution."""


class DegenerateScores(AlfaError, ValueError):
    """Pure-background scores whose foreground part cannot be renormalized."""


class DimensionMismatch(AlfaError, ValueError):
    pass


class InvalidEpsilon(AlfaError, ValueError):
    pass


class InvalidGamma(AlfaError, ValueError):
    pass


class AllZeroProduct(AlfaError, ArithmeticError):
    """Multiplicative score fusion produced an all-zero vector."""


class ZeroWeightSum(AlfaError, ArithmeticError):
    """Weighted box fusion received weights that sum to zero."""


class ConfigError(AlfaError, ValueError):
    pass


class ParseError(AlfaError, ValueError):
    """Malformed line in an input file."""

    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class InvariantViolation(AlfaError, ValueError):
    """A well-formed record violates a type invariant."""

    def __init__(self, path, line_no, invariant):
        self.path = str(path)
        self.line_no = line_no
        self.invariant = invariant
        super().__init__(f"{self.path}:{line_no}: record violates invariant: {invariant}")


class EmptyClassWarning(UserWarning):
    """A class has no ground-truth objects and is excluded from the mean."""
