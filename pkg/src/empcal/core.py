"""Shared domain types, validation and the centered design matrix."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class CalibrationError(ValueError):
    """Base class for invalid calibration inputs."""


class DimensionMismatch(CalibrationError):
    pass


class NonFiniteInput(CalibrationError):
    pass


class ConstantColumnWithAutoscale(CalibrationError):
    pass


class InvalidMaxWeight(CalibrationError):
    pass


class AllZeroWeights(CalibrationError):
    pass


class NoFeasibleRelaxation(RuntimeError):
    """Raised when no relaxation radius yields a converged solution."""


@enum.unique
class Objective(enum.Enum):
    """Loss minimized over the weights.

    ENTROPY minimizes `sum(w * log(w))`, the KL divergence from uniform weights,
    and yields strictly positive weights. QUADRATIC minimizes `0.5 * sum(w**2)`,
    which maximizes the effective sample size and may zero out units.
    """

    ENTROPY = "entropy"
    QUADRATIC = "quadratic"


def _as_finite_matrix(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class CovariateMatrix:
    """Dense n x p matrix of covariate transformations, one row per unit."""

    values: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        values = _as_finite_matrix(self.values, "covariates")
        n, p = values.shape
        if n < 1 or p < 1:
            raise DimensionMismatch(f"covariates must have n >= 1 and p >= 1, got {values.shape}")
        names = tuple(self.column_names) if self.column_names else tuple(f"x{j}" for j in range(p))
        if len(names) != p:
            raise DimensionMismatch(f"{len(names)} column names for {p} columns")
        if len(set(names)) != p:
            raise CalibrationError(f"column names are not unique: {names}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", names)

    @classmethod
    def from_frame(cls, df) -> "CovariateMatrix":
        return cls(df.to_numpy(dtype=float), tuple(str(c) for c in df.columns))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column_means(self) -> np.ndarray:
        return self.values.mean(axis=0)


@dataclass(frozen=True)
class TargetMoments:
    """Target moment vector, optionally with the rows it was computed from.

    Build it with `from_rows` when the target is a (possibly weighted) dataset;
    the means are then the weighted column means with weights normalized to 1.
    """

    means: np.ndarray
    source_rows: Optional[np.ndarray] = None
    source_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float).ravel()
        if not np.all(np.isfinite(means)):
            raise NonFiniteInput("target means contain NaN or Inf")
        means.setflags(write=False)
        object.__setattr__(self, "means", means)

    @classmethod
    def from_rows(cls, rows, weights=None) -> "TargetMoments":
        rows = _as_finite_matrix(rows, "target covariates")
        if rows.shape[0] < 1:
            raise DimensionMismatch("target covariates have no rows")
        if weights is None:
            return cls(rows.mean(axis=0), rows, None)
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape[0] != rows.shape[0]:
            raise DimensionMismatch(
                f"target_weights has length {weights.shape[0]}, "
                f"target covariates have {rows.shape[0]} rows")
        if not np.all(np.isfinite(weights)):
            raise NonFiniteInput("target weights contain NaN or Inf")
        if np.any(weights < 0):
            raise CalibrationError("target weights must be nonnegative")
        total = weights.sum()
        if total <= 0:
            raise AllZeroWeights("target weights are all zero")
        weights = weights / total
        return cls(weights @ rows, rows, weights)

    @classmethod
    def coerce(cls, target, weights=None) -> "TargetMoments":
        """Accepts a TargetMoments, a 1-d mean vector or a 2-d block of target rows."""
        if isinstance(target, cls):
            if weights is not None:
                raise CalibrationError("target_weights given together with TargetMoments")
            return target
        if hasattr(target, "to_numpy"):
            target = target.to_numpy(dtype=float)
        arr = np.asarray(target, dtype=float)
        if arr.ndim == 2:
            return cls.from_rows(arr, weights)
        if weights is not None:
            raise CalibrationError("target_weights require 2-d target rows")
        return cls(arr)

    @property
    def p(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class SolverControls:
    residual_tol: float = 1e-8
    max_iterations: int = 200
    damping_init: float = 1e-3

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise CalibrationError("residual_tol must be positive")
        if self.max_iterations < 1:
            raise CalibrationError("max_iterations must be at least 1")
        if not self.damping_init > 0:
            raise CalibrationError("damping_init must be positive")


@dataclass(frozen=True)
class CalibrationConfig:
    """Optimization settings: objective, weight bounds and L2 tolerance."""

    objective: Objective = Objective.ENTROPY
    max_weight: float = 1.0
    min_weight: float = 0.0
    l2_norm: float = 0.0
    autoscale: bool = False
    solver: SolverControls = field(default_factory=SolverControls)

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if not 0 < self.max_weight <= 1:
            raise InvalidMaxWeight(f"max_weight {self.max_weight} outside (0, 1]")
        if self.min_weight < 0 or self.min_weight > self.max_weight:
            raise CalibrationError(f"min_weight {self.min_weight} outside [0, max_weight]")
        if not self.l2_norm >= 0:
            raise CalibrationError(f"l2_norm {self.l2_norm} is negative")

    def check_sample_size(self, n: int) -> None:
        uniform = 1.0 / n
        # Relative slack so that max_weight=1/n computed in float is accepted.
        if self.max_weight < uniform * (1 - 1e-12):
            raise InvalidMaxWeight(
                f"max_weight {self.max_weight} is below the uniform weight {uniform}")
        if self.min_weight > uniform * (1 + 1e-12):
            raise CalibrationError(
                f"min_weight {self.min_weight} is above the uniform weight {uniform}")

    def bounds(self) -> tuple[float, float]:
        return self.min_weight, self.max_weight


@dataclass(frozen=True)
class CenteredDesign:
    """Rows are sample covariates minus the target moments.

    `scale_info` holds per-column (min, range) pairs when autoscaling was
    applied, otherwise None.
    """

    z: np.ndarray
    scale_info: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.z.shape


@dataclass(frozen=True)
class CalibrationResult:
    """Weights plus solver outcome.

    Attributes:
      weights: Unit weights summing to one.
      success: Whether the dual equations converged to tolerance.
      beta: Multipliers of the moment constraints.
      theta: Multiplier of the normalization constraint.
      balance_l2: Achieved Euclidean norm of the weighted covariate imbalance.
      iterations: Solver iterations used.
      effective_sample_size: Kish effective sample size of `weights`.
      objective_value: Loss evaluated at `weights`.
      l2_norm: Relaxation radius the problem was solved with.
      rank_deficient: True when the centered design has collinear columns.
      message: Short solver status.
    """

    weights: np.ndarray
    success: bool
    beta: np.ndarray
    theta: float
    balance_l2: float
    iterations: int
    effective_sample_size: float
    objective_value: float
    l2_norm: float = 0.0
    rank_deficient: bool = False
    message: str = ""

    def __iter__(self):
        # Allows `weights, success = calibrate(...)`.
        return iter((self.weights, self.success))


def build_centered_design(cov: CovariateMatrix, target: TargetMoments,
                          autoscale: bool = False) -> CenteredDesign:
    """Centers the sample covariates at the target moments.

    With `autoscale`, each column is min-max scaled to [0, 1] using sample
    statistics only, and the same affine map is applied to the target.
    """
    values = cov.values
    means = target.means
    if values.shape[1] != means.shape[0]:
        raise DimensionMismatch(
            f"covariates have {values.shape[1]} columns, target has {means.shape[0]}")
    scale_info = None
    if autoscale:
        lo = values.min(axis=0)
        span = values.max(axis=0) - lo
        constant = np.flatnonzero(span == 0)
        if constant.size:
            names = [cov.column_names[j] for j in constant]
            raise ConstantColumnWithAutoscale(f"constant columns cannot be autoscaled: {names}")
        values = (values - lo) / span
        means = (means - lo) / span
        scale_info = np.column_stack([lo, span])
    z = values - means
    z.setflags(write=False)
    return CenteredDesign(z, scale_info)


def effective_sample_size(weights: Sequence[float]) -> float:
    """Kish effective sample size `(sum w)^2 / sum w^2`."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise CalibrationError("weights must be nonnegative")
    sq = np.dot(w, w)
    if sq == 0:
        raise AllZeroWeights("weights are all zero")
    return float(w.sum() ** 2 / sq)


def objective_value(weights: np.ndarray, objective: Objective) -> float:
    w = np.asarray(weights, dtype=float)
    if Objective(objective) is Objective.QUADRATIC:
        return float(0.5 * np.dot(w, w))
    pos = w > 0
    return float(np.sum(w[pos] * np.log(w[pos])))
