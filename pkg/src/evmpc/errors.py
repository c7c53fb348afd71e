"""Exception hierarchy shared across the package."""


class EvmpcError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(EvmpcError, ValueError):
    """An argument is outside its admissible range."""


class InfeasibleError(EvmpcError):
    """A charging request or optimization problem has no feasible point."""


class InvalidProblemError(EvmpcError, ValueError):
    """An LP container has inconsistent dimensions or non-finite data."""


class SolverError(EvmpcError):
    """The LP solver returned a non-optimal status where an optimum was required."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class ParseError(EvmpcError, ValueError):
    """An input file is malformed. Carries the offending line number when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
