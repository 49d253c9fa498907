"""Exception types and the ``UNAVAILABLE`` marker shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class DivergenceError(ArithmeticError):
    """The requested value is infinite (e.g. K_nu at the origin)."""


class ConvergenceError(ArithmeticError):
    """A series failed to converge within its term budget."""


class NumericError(RuntimeError):
    """A quadrature, fit or root search failed; ``diagnostics`` says why."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class UnsupportedQueryError(TypeError):
    """The model cannot answer this query (e.g. pointwise pdf of a delta)."""


class BoundaryValueError(ValueError):
    """Pointwise value requested exactly at a jump of a distributional solution."""


class StateError(RuntimeError):
    """Object is not in a state that allows the query (e.g. empty tallies)."""


class _Unavailable:
    """Singleton returned when no closed form is catalogued for a query."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return "UNAVAILABLE"

    def __reduce__(self):
        return (_Unavailable, ())


UNAVAILABLE = _Unavailable()
