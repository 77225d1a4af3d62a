"""Dual estimating equations for calibration weights.

The primal weights are a link function of the linear score
`eta_i = Z_i . beta + theta`:

* quadratic loss: `w_i = clip(eta_i, lo, hi)`
* entropy loss:   `w_i = clip(exp(eta_i), lo, hi)`

Plugging the link into the balance and normalization constraints gives a
(p+1)-dimensional system in `(beta, theta)`. When the balance constraint is
relaxed to `|Z^T w|_2 <= eps`, the balance block becomes
`Z^T w + eps * beta / |beta|_2`. The system is solved by a semi-smooth Newton
iteration: the system is the gradient of a convex dual function, which
serves as the line-search merit, with Levenberg-Marquardt damping as the
fallback when the Newton direction fails.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (
    CalibrationConfig,
    CalibrationResult,
    CenteredDesign,
    Objective,
    effective_sample_size,
    objective_value,
)

logger = logging.getLogger(__name__)

# exp() overflows just above 709.
MAX_EXPONENT = 700.0
# Below this |beta| the relaxation term is treated as zero.
BETA_FLOOR = 1e-12
_MAX_HALVINGS = 30
_ARMIJO = 1e-4
_MAX_DAMPING = 1e12
_MIN_DAMPING = 1e-12
_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class DualState:
    beta: np.ndarray
    theta: float
    residual_norm: float = np.inf

    @property
    def params(self) -> np.ndarray:
        return np.append(self.beta, self.theta)

    @classmethod
    def from_params(cls, x: np.ndarray, residual_norm: float = np.inf) -> "DualState":
        x = np.asarray(x, dtype=float)
        return cls(x[:-1].copy(), float(x[-1]), float(residual_norm))


def link_quadratic(z_row, beta, theta, lo=0.0, hi=np.inf):
    """Linear link with clipping, `clip(z . beta + theta, lo, hi)`."""
    eta = np.asarray(z_row, dtype=float) @ np.asarray(beta, dtype=float) + theta
    return np.clip(eta, lo, hi)


def link_entropy(z_row, beta, theta, lo=0.0, hi=np.inf):
    """Exponential link with clipping, `clip(exp(z . beta + theta), lo, hi)`."""
    eta = np.asarray(z_row, dtype=float) @ np.asarray(beta, dtype=float) + theta
    return np.clip(np.exp(np.minimum(eta, MAX_EXPONENT)), lo, hi)


def _weights_and_slope(eta, objective, lo, hi):
    """Returns the weights and dw/deta; the slope is zero on active clips."""
    if objective is Objective.QUADRATIC:
        w = np.clip(eta, lo, hi)
        slope = ((eta > lo) & (eta < hi)).astype(float)
    else:
        e = np.exp(np.minimum(eta, MAX_EXPONENT))
        w = np.clip(e, lo, hi)
        slope = np.where((e > lo) & (e < hi) & (eta < MAX_EXPONENT), e, 0.0)
    return w, slope


def initial_state(n: int, p: int, objective: Objective) -> DualState:
    """Dual point whose weights are exactly uniform."""
    theta = 1.0 / n if Objective(objective) is Objective.QUADRATIC else -np.log(n)
    return DualState(np.zeros(p), float(theta))


def dual_weights(design: CenteredDesign, state: DualState, config: CalibrationConfig) -> np.ndarray:
    eta = design.z @ state.beta + state.theta
    return _weights_and_slope(eta, config.objective, *config.bounds())[0]


class _System:
    """Dual function of one problem, with its gradient and Hessian.

    The dual function is
    `G(beta, theta) = sum_i psi(eta_i) - theta + eps * |beta|_2`, where `psi`
    is the convex conjugate of the per-unit loss restricted to `[lo, hi]`.
    Its gradient is the stacked residual, so roots of the residual are the
    minimizers of `G`.
    """

    def __init__(self, z: np.ndarray, config: CalibrationConfig):
        self.z = z
        self.objective = config.objective
        self.lo, self.hi = config.bounds()
        self.eps = float(config.l2_norm)

    def evaluate(self, x):
        eta = self.z @ x[:-1] + x[-1]
        w, slope = _weights_and_slope(eta, self.objective, self.lo, self.hi)
        return eta, w, slope

    def weights(self, x):
        return self.evaluate(x)[1:]

    def value(self, x, eta, w):
        if self.objective is Objective.QUADRATIC:
            loss = 0.5 * w * w
        else:
            loss = np.zeros_like(w)
            pos = w > 0
            loss[pos] = w[pos] * (np.log(w[pos]) - 1.0)
        terms = w * eta - loss
        value = terms.sum() - x[-1] + self.eps * np.linalg.norm(x[:-1])
        # Rounding scale of the sum, used to tolerate noise near the optimum.
        noise = 64 * np.finfo(float).eps * (np.abs(terms).sum() + abs(x[-1]) + 1.0)
        return value, noise

    def residual(self, x, w=None):
        if w is None:
            w = self.weights(x)[0]
        r = np.empty(x.shape[0])
        r[:-1] = self.z.T @ w
        r[-1] = w.sum() - 1.0
        if self.eps > 0:
            beta = x[:-1]
            norm = np.linalg.norm(beta)
            if norm >= BETA_FLOOR:
                r[:-1] += self.eps * beta / norm
        return r

    def jacobian(self, x, slope=None):
        if slope is None:
            slope = self.weights(x)[1]
        z = self.z
        p = z.shape[1]
        zd = z * slope[:, None]
        jac = np.empty((p + 1, p + 1))
        jac[:p, :p] = z.T @ zd
        col = zd.sum(axis=0)
        jac[:p, p] = col
        jac[p, :p] = col
        jac[p, p] = slope.sum()
        if self.eps > 0:
            beta = x[:-1]
            norm = np.linalg.norm(beta)
            if norm >= BETA_FLOOR:
                u = beta / norm
                jac[:p, :p] += (self.eps / norm) * (np.eye(p) - np.outer(u, u))
        return jac


def residual(design: CenteredDesign, state: DualState, config: CalibrationConfig) -> np.ndarray:
    """Stacked balance and normalization residual at a dual point."""
    return _System(design.z, config).residual(state.params)


def jacobian(design: CenteredDesign, state: DualState, config: CalibrationConfig) -> np.ndarray:
    """Analytic Jacobian of `residual` with respect to `(beta, theta)`."""
    return _System(design.z, config).jacobian(state.params)


def is_rank_deficient(z: np.ndarray) -> bool:
    """Pivoted QR of Z^T Z; flags a diagonal below 1e-10 of the leading one."""
    gram = z.T @ z
    r = scipy.linalg.qr(gram, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return True
    return bool(diag[-1] < _RANK_RTOL * diag[0])


def _separates(z, beta, eps, zscale):
    """True when the direction of beta proves |Z^T w| <= eps infeasible.

    Over the simplex, min |Z^T w| = max over unit d of min_i (-z_i . d), so
    `max_i z_i . d < -eps` for one unit d rules out every weight vector.
    """
    norm = np.linalg.norm(beta)
    if not norm > 0 or not np.isfinite(norm):
        return False
    return bool(np.max(z @ (beta / norm)) < -eps - 1e-9 * zscale)


def _finish(design, config, x, w, success, iterations, message, rank_deficient):
    total = w.sum()
    if total > 0 and np.isfinite(total):
        w = w / total
    balance = float(np.linalg.norm(design.z.T @ w))
    try:
        ess = effective_sample_size(w)
    except ValueError:
        ess = 0.0
    state = DualState.from_params(x, residual_norm=np.nan)
    result = CalibrationResult(
        weights=w,
        success=bool(success),
        beta=state.beta,
        theta=state.theta,
        balance_l2=balance,
        iterations=iterations,
        effective_sample_size=ess,
        objective_value=objective_value(w, config.objective),
        l2_norm=float(config.l2_norm),
        rank_deficient=rank_deficient,
        message=message,
    )
    return state, result


def solve_dual(design: CenteredDesign, config: CalibrationConfig) -> tuple[DualState, CalibrationResult]:
    """Solves the dual equations and maps the root to primal weights.

    Non-convergence is reported through `success=False` on the result, which
    then carries the iterate with the smallest residual.
    """
    # Infeasible problems drive |beta| to infinity; overflow there is expected
    # and caught by the finiteness checks.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _solve_dual(design, config)


def _solve_dual(design, config):
    z = design.z
    n, p = z.shape
    config.check_sample_size(n)
    controls = config.solver
    tol = controls.residual_tol
    rank_deficient = is_rank_deficient(z)
    if rank_deficient:
        logger.info("centered design is rank deficient; constraints are collinear")

    x = initial_state(n, p, config.objective).params
    if config.l2_norm > 0:
        uniform = np.full(n, 1.0 / n)
        if np.linalg.norm(z.T @ uniform) <= config.l2_norm:
            # Relaxation inactive: uniform weights are optimal and feasible.
            state, result = _finish(design, config, x, uniform, True, 0,
                                    "uniform weights within l2_norm", rank_deficient)
            return DualState(state.beta, state.theta, 0.0), result

    # Collinear columns leave the dual flat along null directions of Z. Solving
    # in the coordinates of Z's row space removes them without changing Z^T w
    # or its norm; beta is mapped back at the end.
    basis = None
    if rank_deficient:
        _, sv, vt = np.linalg.svd(z, full_matrices=False)
        # Only numerically null directions go; nearly collinear ones stay
        # and are handled by the damping.
        cutoff = max(n, p) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
        keep = sv > cutoff
        if not keep.all():
            basis = vt[keep].T
            z = z @ basis
            p = z.shape[1]
            x = initial_state(n, p, config.objective).params
    system = _System(z, config)
    # With only simplex bounds, infeasibility has a cheap certificate.
    certify = system.lo == 0 and system.hi >= 1
    zscale = float(np.max(np.abs(z))) if z.size else 0.0

    eta, w, slope = system.evaluate(x)
    r = system.residual(x, w)
    value, noise = system.value(x, eta, w)
    gnorm = np.linalg.norm(r)
    best_x, best_r, best_w = x, r, w
    damping = controls.damping_init
    converged = False
    message = "maximum iterations reached"
    iterations = 0

    def try_step(step, slope_dd):
        # Backtracking on the dual function. Near the optimum, where changes
        # in the dual value drown in rounding, a drop in |residual| suffices.
        t = 1.0
        for _ in range(_MAX_HALVINGS):
            x_new = x + t * step
            eta_new, w_new, slope_new = system.evaluate(x_new)
            r_new = system.residual(x_new, w_new)
            value_new, noise_new = system.value(x_new, eta_new, w_new)
            if np.isfinite(value_new) and np.all(np.isfinite(r_new)):
                if value_new <= value + _ARMIJO * t * slope_dd:
                    return x_new, w_new, slope_new, r_new, value_new, noise_new
                if (value_new <= value + noise + noise_new
                        and np.linalg.norm(r_new) < (1 - _ARMIJO * t) * gnorm):
                    return x_new, w_new, slope_new, r_new, value_new, noise_new
            t *= 0.5
        return None

    # Damping scale used when the current Hessian is (nearly) zero, e.g. when
    # every weight sits on a bound.
    base_scale = float(np.mean(np.abs(np.diag(system.jacobian(x, slope))))) or 1.0

    for iterations in range(controls.max_iterations + 1):
        if not np.all(np.isfinite(r)):
            message = "non-finite residual"
            break
        if np.max(np.abs(r)) <= tol:
            converged = True
            message = "converged"
            break
        if iterations == controls.max_iterations:
            break
        if certify and _separates(z, x[:-1], system.eps, zscale):
            message = "infeasible: a direction separates every unit from the target"
            break

        hess = system.jacobian(x, slope)
        outcome = None
        try:
            step = np.linalg.solve(hess, -r)
        except np.linalg.LinAlgError:
            step = None
        if step is not None and np.all(np.isfinite(step)):
            dd = float(r @ step)
            if dd < 0:
                outcome = try_step(step, dd)

        if outcome is None:
            scale = np.mean(np.abs(np.diag(hess)))
            if not scale > 1e-8 * base_scale:
                scale = base_scale
            eye = np.eye(p + 1)
            while damping <= _MAX_DAMPING:
                try:
                    step = np.linalg.solve(hess + damping * scale * eye, -r)
                except np.linalg.LinAlgError:
                    step = None
                if step is not None and np.all(np.isfinite(step)):
                    dd = float(r @ step)
                    if dd < 0:
                        outcome = try_step(step, dd)
                        if outcome is not None:
                            damping = max(damping / 10, _MIN_DAMPING)
                            break
                damping *= 10
            if outcome is None:
                message = "stalled: no step decreases the dual objective"
                break

        x, w, slope, r, value, noise = outcome
        gnorm = np.linalg.norm(r)
        if gnorm < np.linalg.norm(best_r):
            best_x, best_r, best_w = x, r, w

    if converged:
        best_x, best_r, best_w = x, r, w
    if basis is not None:
        best_x = np.append(basis @ best_x[:-1], best_x[-1])
    logger.debug("solve_dual: %s after %d iterations, |r|=%.3g",
                 message, iterations, np.linalg.norm(best_r))
    state, result = _finish(design, config, best_x, best_w, converged, iterations,
                            message, rank_deficient)
    return DualState(state.beta, state.theta, float(np.linalg.norm(best_r))), result
