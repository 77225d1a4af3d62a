"""Public calibration entry points and weighted estimators."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import (
    CalibrationConfig,
    CalibrationError,
    CalibrationResult,
    CovariateMatrix,
    DimensionMismatch,
    InvalidMaxWeight,
    NoFeasibleRelaxation,
    Objective,
    SolverControls,
    TargetMoments,
    build_centered_design,
)
from .solver import solve_dual

logger = logging.getLogger(__name__)


class EmptyGroup(CalibrationError):
    pass


@dataclass(frozen=True)
class CalibrationRequest:
    covariates: CovariateMatrix
    target: TargetMoments
    config: CalibrationConfig = CalibrationConfig()

    def __post_init__(self):
        if self.covariates.shape[1] != self.target.p:
            raise DimensionMismatch(
                f"covariates have {self.covariates.shape[1]} columns, target has {self.target.p}")


def _as_covariates(covariates) -> CovariateMatrix:
    if isinstance(covariates, CovariateMatrix):
        return covariates
    if hasattr(covariates, "columns") and hasattr(covariates, "to_numpy"):
        return CovariateMatrix.from_frame(covariates)
    return CovariateMatrix(covariates)


def make_request(covariates, target_covariates, target_weights=None, *,
                 objective=Objective.ENTROPY, max_weight=1.0, min_weight=0.0,
                 l2_norm=0.0, autoscale=False,
                 solver: Optional[SolverControls] = None) -> CalibrationRequest:
    cov = _as_covariates(covariates)
    target = TargetMoments.coerce(target_covariates, target_weights)
    config = CalibrationConfig(
        objective=Objective(objective), max_weight=max_weight, min_weight=min_weight,
        l2_norm=l2_norm, autoscale=autoscale, solver=solver or SolverControls())
    return CalibrationRequest(cov, target, config)


def _validate(request: CalibrationRequest) -> None:
    n = request.covariates.shape[0]
    if request.config.max_weight < (1.0 / n) * (1 - 1e-12):
        raise InvalidMaxWeight(
            f"max_weight {request.config.max_weight} must be between the uniform "
            f"weight {1.0 / n} and 1.0")
    request.config.check_sample_size(n)


def calibrate_request(request: CalibrationRequest) -> CalibrationResult:
    _validate(request)
    design = build_centered_design(request.covariates, request.target, request.config.autoscale)
    return solve_dual(design, request.config)[1]


def calibrate(covariates, target_covariates, target_weights=None, *,
              objective=Objective.ENTROPY, max_weight: float = 1.0,
              min_weight: float = 0.0, l2_norm: float = 0.0,
              autoscale: bool = False,
              solver: Optional[SolverControls] = None) -> CalibrationResult:
    """Finds weights whose weighted covariate means match the target.

    Among weights summing to one within `[min_weight, max_weight]` and with
    `|weighted mean - target mean|_2 <= l2_norm`, returns the one minimizing
    the chosen objective.

    Args:
      covariates: n x p sample covariates (array, DataFrame or CovariateMatrix).
      target_covariates: m x p target rows, a length-p vector of target means,
        or a TargetMoments.
      target_weights: optional weights of the target rows.
      objective: Objective.ENTROPY or Objective.QUADRATIC.
      max_weight: upper bound on each weight, between 1/n and 1.
      min_weight: lower bound on each weight, between 0 and 1/n.
      l2_norm: allowed Euclidean distance between weighted and target means.
      autoscale: min-max scale each covariate column to [0, 1] first; the
        target receives the same scaling and `l2_norm` is measured in the
        scaled units.
      solver: iteration controls.

    Returns:
      A CalibrationResult. It unpacks as `weights, success = calibrate(...)`.
    """
    request = make_request(
        covariates, target_covariates, target_weights, objective=objective,
        max_weight=max_weight, min_weight=min_weight, l2_norm=l2_norm,
        autoscale=autoscale, solver=solver)
    return calibrate_request(request)


def maybe_exact_calibrate_request(request: CalibrationRequest, *, rtol: float = 1e-8,
                                  max_bisections: int = 64) -> tuple[CalibrationResult, float]:
    _validate(request)
    config = replace(request.config, l2_norm=0.0)
    design = build_centered_design(request.covariates, request.target, config.autoscale)

    result = solve_dual(design, config)[1]
    if result.success:
        return result, 0.0

    n = design.z.shape[0]
    # Same expression the solver uses to detect an inactive relaxation.
    imbalance = float(np.linalg.norm(design.z.T @ np.full(n, 1.0 / n)))
    if imbalance == 0:
        raise NoFeasibleRelaxation("exact calibration failed on already balanced data")

    def attempt(eps):
        res = solve_dual(design, replace(config, l2_norm=eps))[1]
        logger.debug("l2_norm=%.6g: %s", eps, "ok" if res.success else "failed")
        return res

    # Geometric ladder, capped at the imbalance of uniform weights.
    lo, hi, best = 0.0, None, None
    eps = 1e-4 * imbalance
    while True:
        eps = min(eps, imbalance)
        res = attempt(eps)
        if res.success:
            hi, best = eps, res
            break
        if eps >= imbalance:
            raise NoFeasibleRelaxation(
                f"calibration failed even at l2_norm={imbalance:.6g}, where uniform "
                f"weights of the {n} units are feasible")
        lo = eps
        eps *= 4.0

    for _ in range(max_bisections):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        res = attempt(mid)
        if res.success:
            hi, best = mid, res
        else:
            lo = mid
    return best, hi


def maybe_exact_calibrate(covariates, target_covariates, target_weights=None, *,
                          objective=Objective.ENTROPY, max_weight: float = 1.0,
                          min_weight: float = 0.0, autoscale: bool = False,
                          solver: Optional[SolverControls] = None,
                          rtol: float = 1e-8) -> tuple[CalibrationResult, float]:
    """Calibrates exactly if possible, otherwise with the smallest workable l2_norm.

    The exact problem is tried first. If it does not converge, the radius is
    grown geometrically from 1e-4 times the initial imbalance until a solve
    succeeds, then the bracket between the last failure and first success is
    bisected down to relative width `rtol`.

    Returns:
      `(result, l2_norm)`, with `l2_norm == 0` when exact balance was reached.

    Raises:
      NoFeasibleRelaxation: if no radius up to the initial imbalance converges.
    """
    request = make_request(
        covariates, target_covariates, target_weights, objective=objective,
        max_weight=max_weight, min_weight=min_weight, autoscale=autoscale,
        solver=solver)
    return maybe_exact_calibrate_request(request, rtol=rtol)


def from_formula(formula: str, df, target_df, target_weights=None, *,
                 l2_norm: Optional[float] = None, **options) -> tuple[CalibrationResult, float]:
    """Builds covariates from `formula` on both frames, then calibrates.

    With `l2_norm=None` the radius is chosen by `maybe_exact_calibrate`;
    otherwise `calibrate` runs at the given radius. Returns `(result, l2_norm)`.
    """
    from .formula import build_design, parse_formula

    parsed = parse_formula(formula)
    cov = build_design(parsed, df)
    target = build_design(parsed, target_df, levels_from=df)
    if cov.column_names != target.column_names:
        raise DimensionMismatch(
            f"sample columns {cov.column_names} differ from target columns {target.column_names}")
    if l2_norm is None:
        return maybe_exact_calibrate(cov, target.values, target_weights, **options)
    return calibrate(cov, target.values, target_weights, l2_norm=l2_norm, **options), l2_norm


def estimate_weighted_mean(outcomes, weights) -> float:
    y = np.asarray(outcomes, dtype=float)
    w = np.asarray(weights, dtype=float)
    if y.shape != w.shape:
        raise DimensionMismatch(f"outcomes {y.shape} and weights {w.shape} differ in shape")
    if abs(w.sum() - 1.0) > 1e-6:
        raise CalibrationError(f"weights sum to {w.sum()}, expected 1")
    return float(np.dot(w, y))


def estimate_att(treated_outcomes, control_outcomes, control_weights=None) -> float:
    """Affine ATT estimate: treated mean minus weighted control mean."""
    treated = np.asarray(treated_outcomes, dtype=float)
    control = np.asarray(control_outcomes, dtype=float)
    if treated.size == 0 or control.size == 0:
        raise EmptyGroup("both treated and control groups need at least one unit")
    if control_weights is None:
        control_weights = np.full(control.shape[0], 1.0 / control.shape[0])
    return float(treated.mean() - estimate_weighted_mean(control, control_weights))
