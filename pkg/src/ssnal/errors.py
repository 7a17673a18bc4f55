"""Exception types shared across the package."""


class SsnalError(Exception):
    """Base class for errors raised by this package."""


class InputError(SsnalError, ValueError):
    """Invalid user input (shapes, values, file contents)."""


class InfeasibleProblemError(InputError):
    """The constraint set {x : a'x = d, l <= x <= u} is empty."""


class ParseError(InputError):
    """Malformed data file; message carries line/column location."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class LineSearchError(SsnalError, RuntimeError):
    """Armijo backtracking failed; signals a non-descent direction or stale caches."""


class InternalError(SsnalError, RuntimeError):
    """A should-not-happen condition inside the library."""
