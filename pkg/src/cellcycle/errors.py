"""Exception types shared across the package."""


class CellCycleError(Exception):
    """Base class for all package errors."""


class ParseError(CellCycleError):
    """A model file could not be parsed into a ModelSpec."""


class NonFiniteEvaluation(CellCycleError):
    """A model function returned NaN or inf on the validation grid."""


class DomainError(CellCycleError):
    """The numerical domain itself is malformed (e.g. mMax <= mP)."""


class DomainExit(CellCycleError):
    """A flow left its domain before the requested time elapsed."""


class RangeError(CellCycleError):
    """A value lies outside the range covered by the truncated domain."""


class CflViolation(CellCycleError):
    """Time step too large for the explicit transport scheme."""


class NegativeDensity(CellCycleError):
    """The explicit scheme produced a negative density."""


class EmptySample(CellCycleError):
    """A histogram was requested for an empty sample."""
