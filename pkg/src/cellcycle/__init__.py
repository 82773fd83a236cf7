"""Two-phase cell-cycle model: generational operator, PDMP simulation,
stationary densities and the delayed transport equation."""

from .density import GridDensity
from .discrete import (
    ClassificationReport,
    KernelMatrix,
    Verdict,
    alpha_profile,
    apply_P,
    build_kernel,
    classify_discrete,
    conjugate_check,
    power_iterate,
)
from .errors import (
    CellCycleError,
    CflViolation,
    DomainError,
    DomainExit,
    EmptySample,
    NegativeDensity,
    NonFiniteEvaluation,
    ParseError,
    RangeError,
)
from .flows import FlowSolver
from .model import ModelSpec, ScalarFn, ValidationReport, load_spec, save_spec, test_model, validate
from .stationary import StationaryProfile, classify_continuous, marginal_resting, mean_resting_time

__version__ = "0.1.0"
