"""Random flights with arbitrary free-path distributions in d dimensions."""

from .errors import (
    UNAVAILABLE,
    BoundaryValueError,
    ConvergenceError,
    DivergenceError,
    DomainError,
    NumericError,
    StateError,
    UnsupportedQueryError,
)
from .freepath import (
    BesselK,
    BetaPrime,
    Chi,
    Exponential,
    FreePathModel,
    Gamma,
    Pearson,
    TransportProblem,
    parse_model,
)

__version__ = "0.1.0"

__all__ = [
    "UNAVAILABLE",
    "BoundaryValueError",
    "ConvergenceError",
    "DivergenceError",
    "DomainError",
    "NumericError",
    "StateError",
    "UnsupportedQueryError",
    "BesselK",
    "BetaPrime",
    "Chi",
    "Exponential",
    "FreePathModel",
    "Gamma",
    "Pearson",
    "TransportProblem",
    "parse_model",
]
