"""Exception hierarchy shared by every betamix module."""


class BetaMixError(Exception):
    """Base class for all errors raised by betamix."""


class DomainError(BetaMixError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class InputError(BetaMixError, ValueError):
    """User-supplied data or options are unusable."""


class DegenerateColumnError(InputError):
    """One or more columns have zero variance (or zero norm)."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__("degenerate column(s): " + ", ".join(map(str, self.columns)))


class NumericError(BetaMixError, ArithmeticError):
    """An iterative solver failed to converge.

    ``trace`` holds whatever per-iteration history the solver kept, so the
    failure can be diagnosed after the fact.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
