"""Exception hierarchy.

``ValidationError`` and its subclasses are input problems (CLI exit 2);
everything else is an internal/numerical failure (CLI exit 1).
"""


class MFBSDEError(Exception):
    pass


class ValidationError(MFBSDEError, ValueError):
    pass


class ColumnSumNonzero(ValidationError):
    def __init__(self, column, segment, total):
        self.column = column
        self.segment = segment
        self.total = total
        super().__init__(
            f"column {column} of generator segment {segment} sums to {total!r}, expected 0"
        )


class NegativeOffDiagonal(ValidationError):
    def __init__(self, row, column, segment, value):
        self.row, self.column, self.segment, self.value = row, column, segment, value
        super().__init__(
            f"off-diagonal entry ({row}, {column}) of generator segment {segment} "
            f"is negative ({value!r})"
        )


class BadSegmentTimes(ValidationError):
    pass


class NotOnSimplex(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class HypothesisViolated(ValidationError):
    def __init__(self, message, where=None):
        self.where = where
        super().__init__(message)


class UnknownForm(ValidationError):
    pass


class TreeTooLarge(ValidationError):
    pass


class ConfigError(ValidationError):
    def __init__(self, message, pointer=""):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


class ExprSyntaxError(ValidationError):
    def __init__(self, position, expected, found=None):
        self.position = position
        self.expected = tuple(expected)
        self.found = found
        what = "end of input" if found is None else repr(found)
        super().__init__(
            f"syntax error at position {position}: found {what}, "
            f"expected one of {', '.join(self.expected)}"
        )


class UnknownVariable(ValidationError):
    def __init__(self, name, position):
        self.name = name
        self.position = position
        super().__init__(f"unknown identifier {name!r} at position {position}")


class NonFiniteValue(MFBSDEError, ArithmeticError):
    pass


class ConvergenceWarning(UserWarning):
    """Picard iteration hit max_iter before reaching the tolerance."""


class GridTooCoarse(UserWarning):
    """Halving the step count moved u(0) by more than the advisory threshold."""


class LipschitzWarning(UserWarning):
    """Randomized spot-check found a ratio above the declared constant."""
