"""Real-time charging coordination for an EV aggregator in energy and regulation markets."""

from evmpc.errors import (
    EvmpcError,
    InfeasibleError,
    InvalidParameterError,
    InvalidProblemError,
    ParseError,
    SolverError,
)

__version__ = "0.1.0"

__all__ = [
    "EvmpcError",
    "InfeasibleError",
    "InvalidParameterError",
    "InvalidProblemError",
    "ParseError",
    "SolverError",
    "__version__",
]
