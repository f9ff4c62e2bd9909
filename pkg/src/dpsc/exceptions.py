"""Exception hierarchy shared by the library and the command line."""


class DPSCError(Exception):
    """Base class for all errors raised by :mod:`dpsc`."""


class ConfigError(DPSCError, ValueError):
    """Invalid configuration or argument value."""


class PrivacyBudgetError(DPSCError, ValueError):
    """A privacy plan is infeasible or violates its preconditions.

    Attributes
    ----------
    min_epsilon : float or None
        Smallest budget reachable with the requested schedule, when known.
    """

    def __init__(self, message, min_epsilon=None):
        super().__init__(message)
        self.min_epsilon = min_epsilon


class SolverDivergenceError(DPSCError, ArithmeticError):
    """An iterate became non-finite or exceeded the divergence guard.

    Attributes
    ----------
    iteration : int
        Outer iteration at which the failure was detected.
    inner_step : int or None
        Gradient step inside the w-update, when relevant.
    """

    def __init__(self, message, iteration, inner_step=None):
        super().__init__(message)
        self.iteration = iteration
        self.inner_step = inner_step


class DataFormatError(DPSCError, ValueError):
    """Malformed input file, with the offending location when known."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column
