"""Balance tables, weight summaries and density exports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import (
    CalibrationError,
    CalibrationResult,
    CovariateMatrix,
    DimensionMismatch,
    TargetMoments,
    build_centered_design,
    effective_sample_size,
)

STD_DIFF_DENOMINATOR = "unweighted sample standard deviation of the calibrated group"


class DegenerateData(CalibrationError):
    pass


@dataclass(frozen=True)
class ColumnBalance:
    name: str
    target_mean: float
    unweighted_sample_mean: float
    weighted_sample_mean: float
    abs_std_diff_before: float
    abs_std_diff_after: float
    zero_variance: bool = False


@dataclass(frozen=True)
class WeightSummary:
    min: float
    max: float
    mean: float
    max_mean_ratio: float
    n_zero: int


@dataclass(frozen=True)
class BalanceReport:
    columns: tuple[ColumnBalance, ...]
    balance_l2: float
    balance_l2_raw: float
    ess_before: float
    ess_after: float
    weights: WeightSummary
    success: bool
    l2_norm: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["columns"] = [asdict(c) for c in self.columns]
        out["std_diff_denominator"] = STD_DIFF_DENOMINATOR
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def to_text(self) -> str:
        header = ("column", "target", "unweighted", "weighted", "|sd| before", "|sd| after")
        rows = [header]
        for c in self.columns:
            rows.append((
                c.name + (" *" if c.zero_variance else ""),
                f"{c.target_mean:.6g}", f"{c.unweighted_sample_mean:.6g}",
                f"{c.weighted_sample_mean:.6g}", f"{c.abs_std_diff_before:.4g}",
                f"{c.abs_std_diff_after:.4g}",
            ))
        widths = [max(len(r[j]) for r in rows) for j in range(len(header))]
        lines = ["  ".join(cell.rjust(width) if j else cell.ljust(width)
                           for j, (cell, width) in enumerate(zip(row, widths)))
                 for row in rows]
        ws = self.weights
        lines += [
            "",
            f"balance L2: {self.balance_l2:.6g} (raw units {self.balance_l2_raw:.6g}, "
            f"l2_norm {self.l2_norm:.6g}, success {self.success})",
            f"effective sample size: {self.ess_before:.1f} -> {self.ess_after:.1f}",
            f"weights: min {ws.min:.4g}  max {ws.max:.4g}  mean {ws.mean:.4g}  "
            f"max/mean {ws.max_mean_ratio:.3g}  zeros {ws.n_zero}",
        ]
        if any(c.zero_variance for c in self.columns):
            lines.append("* zero-variance column: absolute rather than standardized difference")
        return "\n".join(lines)


def balance_report(cov: CovariateMatrix, target: TargetMoments,
                   result: CalibrationResult) -> BalanceReport:
    """Compares unweighted and weighted sample means against the target.

    `balance_l2` is copied from the result and is in the units the solver
    worked in (scaled when autoscale was on); `balance_l2_raw` is recomputed
    on the original covariates.

    Standardized differences divide by the unweighted sample standard
    deviation of each column; zero-variance columns report the absolute
    difference and are flagged.
    """
    values = cov.values
    w = np.asarray(result.weights, dtype=float)
    if w.shape[0] != values.shape[0]:
        raise DimensionMismatch(f"{w.shape[0]} weights for {values.shape[0]} units")
    if values.shape[1] != target.p:
        raise DimensionMismatch(f"covariates have {values.shape[1]} columns, target has {target.p}")
    unweighted = values.mean(axis=0)
    weighted = w @ values
    sd = values.std(axis=0, ddof=1) if values.shape[0] > 1 else np.zeros(values.shape[1])
    columns = []
    for j, name in enumerate(cov.column_names):
        zero_var = not sd[j] > 0
        denom = 1.0 if zero_var else sd[j]
        columns.append(ColumnBalance(
            name=name,
            target_mean=float(target.means[j]),
            unweighted_sample_mean=float(unweighted[j]),
            weighted_sample_mean=float(weighted[j]),
            abs_std_diff_before=float(abs(unweighted[j] - target.means[j]) / denom),
            abs_std_diff_after=float(abs(weighted[j] - target.means[j]) / denom),
            zero_variance=zero_var,
        ))
    # Same expression as the solver, on unscaled covariates.
    raw_balance = float(np.linalg.norm(build_centered_design(cov, target).z.T @ w))
    mean = float(w.mean())
    summary = WeightSummary(
        min=float(w.min()), max=float(w.max()), mean=mean,
        max_mean_ratio=float(w.max() / mean) if mean > 0 else float("inf"),
        n_zero=int(np.count_nonzero(w == 0)),
    )
    return BalanceReport(
        columns=tuple(columns),
        balance_l2=float(result.balance_l2),
        balance_l2_raw=raw_balance,
        ess_before=float(values.shape[0]),
        ess_after=effective_sample_size(w),
        weights=summary,
        success=bool(result.success),
        l2_norm=float(result.l2_norm),
    )


def silverman_bandwidth(values) -> float:
    x = np.asarray(values, dtype=float)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * x.shape[0] ** -0.2


def _kde(grid, x, w, h):
    u = (grid[:, None] - x[None, :]) / h
    return (np.exp(-0.5 * u * u) @ w) / (h * np.sqrt(2 * np.pi))


def density_export(values, weights, grid_size: int = 200) -> dict[str, np.ndarray]:
    """Gaussian kernel densities of `values`, unweighted and weighted.

    Both curves share one Silverman bandwidth computed from the unweighted
    data and are evaluated on an even grid over `[min - 3h, max + 3h]`.

    Returns:
      A dict of equal-length arrays `grid_point`, `unweighted_density` and
      `weighted_density`.
    """
    x = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if grid_size < 2:
        raise CalibrationError("grid_size must be at least 2")
    if x.shape != w.shape:
        raise DimensionMismatch(f"{x.shape[0]} values but {w.shape[0]} weights")
    if np.any(w < 0) or not w.sum() > 0:
        raise CalibrationError("weights must be nonnegative and not all zero")
    if np.unique(x).size < 2:
        raise DegenerateData("density needs at least two distinct values")
    h = silverman_bandwidth(x)
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_size)
    uniform = np.full(x.shape[0], 1.0 / x.shape[0])
    # Constant weights normalize to exactly the uniform vector.
    w_norm = uniform if np.all(w == w[0]) else w / w.sum()
    return {
        "grid_point": grid,
        "unweighted_density": _kde(grid, x, uniform, h),
        "weighted_density": _kde(grid, x, w_norm, h),
    }
