"""Empirical calibration weights via the dual of a convex program."""

__version__ = "0.1.0"

from .calibration import (
    CalibrationRequest,
    EmptyGroup,
    calibrate,
    calibrate_request,
    estimate_att,
    estimate_weighted_mean,
    from_formula,
    maybe_exact_calibrate,
    maybe_exact_calibrate_request,
)
from .core import (
    AllZeroWeights,
    CalibrationConfig,
    CalibrationError,
    CalibrationResult,
    CenteredDesign,
    ConstantColumnWithAutoscale,
    CovariateMatrix,
    DimensionMismatch,
    InvalidMaxWeight,
    NoFeasibleRelaxation,
    NonFiniteInput,
    Objective,
    SolverControls,
    TargetMoments,
    build_centered_design,
    effective_sample_size,
)
from .diagnostics import BalanceReport, balance_report, density_export
from .solver import DualState, solve_dual
