import logging

import numpy as np
import pytest

from empcal.core import (
    CalibrationConfig,
    CovariateMatrix,
    Objective,
    SolverControls,
    TargetMoments,
    build_centered_design,
)
from empcal.solver import (
    DualState,
    initial_state,
    is_rank_deficient,
    jacobian,
    link_entropy,
    link_quadratic,
    residual,
    solve_dual,
)

from oracles import central_difference_jacobian, entropy_three_point_ratio

THREE_POINT = (np.array([[0.0], [1.0], [2.0]]), np.array([0.5]))


def design(cov, means, autoscale=False):
    return build_centered_design(CovariateMatrix(cov), TargetMoments(means), autoscale)


def solve(cov, means, **config):
    return solve_dual(design(cov, means), CalibrationConfig(**config))


@pytest.fixture(scope="module")
def quadratic_oracle():
    # w_i = a + b c_i with sum w = 1 and sum w c = 0.5 (no weight at a bound).
    c = THREE_POINT[0].ravel()
    a, b = np.linalg.solve([[3.0, c.sum()], [c.sum(), c @ c]], [1.0, 0.5])
    return a + b * c, b


class TestLinks:
    def test_quadratic_zero_row(self):
        assert link_quadratic(np.zeros(2), np.array([3.0, -1.0]), 0.25, 0.0, 1.0) == 0.25

    def test_quadratic_relu(self):
        assert link_quadratic([1.0], [-0.3], 0.0, 0.0, 1.0) == 0.0

    def test_quadratic_upper(self):
        assert link_quadratic([1.0], [0.9], 0.0, 0.0, 0.5) == 0.5

    def test_entropy_exp0(self):
        assert link_entropy([0.0], [1.0], 0.0) == 1.0

    def test_entropy_uniform(self):
        z = np.random.default_rng(0).normal(size=(7, 3))
        np.testing.assert_allclose(link_entropy(z, np.zeros(3), -np.log(7)), np.full(7, 1 / 7))

    def test_entropy_overflow_guard(self):
        assert np.isfinite(link_entropy([1.0], [1e6], 0.0))

    def test_entropy_three_point_value(self):
        x = entropy_three_point_ratio()
        # z encodes covariate 0 after centering at 0.5.
        theta = -np.log(1 + x + x * x) + 0.5 * np.log(x)
        assert link_entropy([-0.5], [np.log(x)], theta) == pytest.approx(0.6162, abs=1e-4)


class TestResidual:
    def test_balanced_uniform(self):
        d = design([[0.0], [2.0], [1.0]], [1.0])
        st = initial_state(3, 1, Objective.QUADRATIC)
        np.testing.assert_allclose(residual(d, st, CalibrationConfig(objective="quadratic")), 0, atol=1e-15)

    def test_plug_in_at_uniform(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(9, 2)) + 1.0
        d = design(x, [0.0, 0.0])
        for obj in Objective:
            r = residual(d, initial_state(9, 2, obj), CalibrationConfig(objective=obj))
            np.testing.assert_allclose(r[:2], d.z.mean(axis=0), rtol=1e-12)
            assert r[2] == pytest.approx(0.0, abs=1e-15)

    def test_zero_at_solution(self, quadratic_oracle):
        w, _ = quadratic_oracle
        state, result = solve(*THREE_POINT, objective="quadratic")
        cfg = CalibrationConfig(objective="quadratic")
        assert np.linalg.norm(residual(design(*THREE_POINT), state, cfg)) < 1e-8

    def test_slack_defined_zero_at_beta_zero(self):
        d = design([[0.0], [2.0]], [0.5])
        st = initial_state(2, 1, Objective.QUADRATIC)
        exact = residual(d, st, CalibrationConfig(objective="quadratic"))
        relaxed = residual(d, st, CalibrationConfig(objective="quadratic", l2_norm=0.3))
        np.testing.assert_array_equal(exact, relaxed)


class TestJacobian:
    def test_quadratic_inside_bounds(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(6, 2)) * 0.01
        d = design(z, [0.0, 0.0])
        st = initial_state(6, 2, Objective.QUADRATIC)
        jac = jacobian(d, st, CalibrationConfig(objective="quadratic"))
        ones = np.ones(6)
        expected = np.block([[d.z.T @ d.z, (d.z.T @ ones)[:, None]],
                             [(ones @ d.z)[None, :], np.array([[6.0]])]])
        np.testing.assert_allclose(jac, expected, rtol=1e-12)

    def test_entropy_at_uniform(self):
        rng = np.random.default_rng(3)
        d = design(rng.normal(size=(8, 3)), [0.1, 0.0, -0.1])
        jac = jacobian(d, initial_state(8, 3, Objective.ENTROPY), CalibrationConfig())
        np.testing.assert_allclose(jac[:3, :3], d.z.T @ d.z / 8, rtol=1e-12)

    @pytest.mark.parametrize("objective", ["quadratic", "entropy"])
    @pytest.mark.parametrize("eps", [0.0, 0.2])
    def test_finite_differences(self, objective, eps):
        rng = np.random.default_rng(4)
        d = design(rng.normal(size=(20, 3)), [0.1, -0.2, 0.05])
        cfg = CalibrationConfig(objective=objective, l2_norm=eps)
        x0 = initial_state(20, 3, cfg.objective).params + np.append(0.01 * rng.normal(size=3), 0.0)

        def fun(x):
            return residual(d, DualState.from_params(x), cfg)

        analytic = jacobian(d, DualState.from_params(x0), cfg)
        numeric = central_difference_jacobian(fun, x0)
        assert np.max(np.abs(analytic - numeric)) < 1e-5


class TestSolveDual:
    def test_two_points_forced(self):
        _, result = solve([[0.0], [2.0]], [1.0], objective="quadratic")
        assert result.success
        np.testing.assert_allclose(result.weights, [0.5, 0.5], atol=1e-12)

    def test_three_point_quadratic(self, quadratic_oracle):
        w, slope = quadratic_oracle
        np.testing.assert_allclose(w, [7 / 12, 4 / 12, 1 / 12])
        state, result = solve(*THREE_POINT, objective="quadratic")
        assert result.success
        np.testing.assert_allclose(result.weights, w, atol=1e-10)
        assert state.beta[0] == pytest.approx(slope)
        # theta is the intercept in centered covariates: 7/12 - 0.25 * 0.5.
        assert state.theta == pytest.approx(7 / 12 + slope * 0.5)

    def test_three_point_entropy(self):
        x = entropy_three_point_ratio()
        assert x == pytest.approx((-1 + np.sqrt(13)) / 6, abs=1e-14)
        expected = np.array([1.0, x, x * x]) / (1 + x + x * x)
        state, result = solve(*THREE_POINT)
        assert result.success
        np.testing.assert_allclose(result.weights, expected, atol=1e-10)
        np.testing.assert_allclose(result.weights, [0.6162, 0.2676, 0.1162], atol=1e-4)
        assert np.exp(state.beta[0]) == pytest.approx(x, rel=1e-8)

    @pytest.mark.parametrize("objective", ["quadratic", "entropy"])
    def test_upper_bound_active(self, objective):
        # With w0 = 0.55, the two balance equations leave (0.4, 0.05).
        _, result = solve(*THREE_POINT, objective=objective, max_weight=0.55)
        assert result.success
        np.testing.assert_allclose(result.weights, [0.55, 0.4, 0.05], atol=1e-8)

    @pytest.mark.parametrize("objective", ["quadratic", "entropy"])
    def test_upper_bound_infeasible(self, objective):
        # Mean 0.5 over {0, 1, 2} needs w0 >= 0.5.
        _, result = solve(*THREE_POINT, objective=objective, max_weight=0.45)
        assert not result.success
        assert result.weights.sum() == pytest.approx(1.0)

    def test_lower_bound(self):
        _, result = solve(*THREE_POINT, objective="quadratic", min_weight=0.1)
        assert result.success
        assert result.weights.min() >= 0.1 - 1e-9
        assert result.weights @ [0.0, 1.0, 2.0] == pytest.approx(0.5, abs=1e-8)

    def test_kang_schafer_true_z(self):
        from empcal.simulation import generate_kang_schafer

        s = generate_kang_schafer(1000, seed=11)
        t = s.treated
        d = build_centered_design(CovariateMatrix(s.z[~t]), TargetMoments.from_rows(s.z[t]))
        _, result = solve_dual(d, CalibrationConfig())
        assert result.success
        assert result.balance_l2 < 1e-8

    def test_infeasible_reports_failure(self):
        _, result = solve([[0.0], [1.0]], [5.0], solver=SolverControls(max_iterations=50))
        assert not result.success
        assert result.weights.sum() == pytest.approx(1.0)

    def test_relaxed_balance_equals_eps(self):
        _, result = solve([[0.0], [1.0], [3.0]], [3.2], objective="quadratic", l2_norm=0.5)
        assert result.success
        assert result.balance_l2 == pytest.approx(0.5, abs=1e-6)

    def test_inactive_relaxation_gives_uniform(self):
        state, result = solve([[0.0], [1.0]], [0.6], l2_norm=0.5)
        assert result.success
        np.testing.assert_allclose(result.weights, [0.5, 0.5])
        np.testing.assert_array_equal(state.beta, [0.0])

    def test_rank_warning(self, caplog):
        x = np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
        assert is_rank_deficient(x - [1.0, 2.0])
        with caplog.at_level(logging.INFO, logger="empcal.solver"):
            _, result = solve(x, [1.5, 3.0], objective="quadratic")
        assert result.success
        assert result.rank_deficient
        assert "rank deficient" in caplog.text

    def test_rank_full(self):
        assert not is_rank_deficient(np.random.default_rng(0).normal(size=(10, 3)))

    def test_duplicate_rows(self):
        rng = np.random.default_rng(5)
        base = rng.normal(size=(5, 2))
        x = np.vstack([base, base[:2]])
        for objective in ("quadratic", "entropy"):
            _, result = solve(x, base[:3].mean(axis=0), objective=objective)
            assert result.success
            assert abs(result.weights[0] - result.weights[5]) <= 1e-12
            assert abs(result.weights[1] - result.weights[6]) <= 1e-12

    def test_quadratic_optimal_against_feasible_perturbations(self, quadratic_oracle):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(12, 2))
        target = rng.dirichlet(np.ones(12)) @ x
        _, result = solve(x, target, objective="quadratic")
        w = result.weights
        assert result.success and w.min() > 0
        z = x - target
        a = np.vstack([z.T, np.ones(12)])
        proj = np.eye(12) - np.linalg.pinv(a) @ a
        best = 0.5 * w @ w
        checked = 0
        while checked < 1000:
            cand = w + proj @ rng.normal(scale=0.02, size=12)
            if cand.min() < 0:
                continue
            checked += 1
            assert best <= 0.5 * cand @ cand + 1e-9

    def test_infeasible_certificate_stops_early(self):
        _, result = solve([[0.0], [1.0]], [5.0])
        assert not result.success
        assert result.message.startswith("infeasible")
        assert result.iterations < 50

    def test_no_certificate_with_upper_bound(self):
        _, result = solve(*THREE_POINT, max_weight=0.45, solver=SolverControls(max_iterations=30))
        assert result.message == "maximum iterations reached"

    def test_collinear_beta_in_row_space(self):
        x = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 6.0]])
        state, result = solve(x, [1.0, 2.0], objective="entropy")
        assert result.success
        # beta has no component along the null direction (2, -1).
        assert abs(state.beta @ [2.0, -1.0]) < 1e-12
