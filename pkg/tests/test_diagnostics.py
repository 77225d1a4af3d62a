import json

import numpy as np
import pytest
from scipy.integrate import trapezoid

from empcal import CovariateMatrix, TargetMoments, calibrate
from empcal.diagnostics import DegenerateData, balance_report, density_export
from empcal.simulation import generate_kang_schafer


class TestBalanceReport:
    def test_balanced_uniform(self):
        x = np.array([[0.0, 1.0], [2.0, 3.0], [1.0, 2.0]])
        cov, target = CovariateMatrix(x), TargetMoments(x.mean(axis=0))
        rep = balance_report(cov, target, calibrate(cov, target))
        for c in rep.columns:
            assert c.abs_std_diff_before == pytest.approx(0.0, abs=1e-12)
            assert c.abs_std_diff_after == pytest.approx(0.0, abs=1e-12)
        assert rep.ess_after == pytest.approx(3.0)

    def test_exact_calibration_after_is_small(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(50, 3))
        target = TargetMoments(x[:10].mean(axis=0))
        result = calibrate(x, target)
        rep = balance_report(CovariateMatrix(x), target, result)
        assert result.success
        assert max(c.abs_std_diff_after for c in rep.columns) < 1e-6
        assert rep.balance_l2 == result.balance_l2
        for j, c in enumerate(rep.columns):
            assert c.weighted_sample_mean == pytest.approx(result.weights @ x[:, j], abs=1e-9)
        assert rep.ess_after <= 50

    def test_misspecified_leaves_z_imbalanced(self):
        s = generate_kang_schafer(1000, seed=2)
        t = s.treated
        result = calibrate(s.x[~t], s.x[t])
        rep_x = balance_report(CovariateMatrix(s.x[~t]), TargetMoments.from_rows(s.x[t]), result)
        rep_z = balance_report(CovariateMatrix(s.z[~t]), TargetMoments.from_rows(s.z[t]), result)
        assert max(c.abs_std_diff_after for c in rep_x.columns) < 1e-6
        # Recompute the Z1 weighted mean directly from the stored replicate.
        z1 = float(np.dot(result.weights, s.z[~t][:, 0]))
        assert rep_z.columns[0].weighted_sample_mean == pytest.approx(z1, abs=1e-9)
        assert rep_z.columns[0].abs_std_diff_after > 0.05

    def test_zero_variance_flagged(self):
        x = np.array([[1.0, 0.0], [1.0, 2.0]])
        rep = balance_report(CovariateMatrix(x), TargetMoments([2.0, 1.0]),
                             calibrate(x[:, 1:], [1.0]))
        assert rep.columns[0].zero_variance
        assert rep.columns[0].abs_std_diff_after == pytest.approx(1.0)
        assert "*" in rep.to_text()

    def test_json_schema(self):
        x = np.array([[0.0], [1.0], [2.0]])
        rep = balance_report(CovariateMatrix(x, ("a",)), TargetMoments([0.5]), calibrate(x, [0.5]))
        data = json.loads(rep.to_json())
        assert set(data) >= {"columns", "balance_l2", "ess_before", "ess_after", "weights",
                             "std_diff_denominator"}
        assert set(data["columns"][0]) >= {"name", "target_mean", "unweighted_sample_mean",
                                           "weighted_sample_mean", "abs_std_diff_before",
                                           "abs_std_diff_after"}
        assert set(data["weights"]) == {"min", "max", "mean", "max_mean_ratio", "n_zero"}
        assert "a" in rep.to_text()


@pytest.fixture(scope="module")
def normal_sample():
    return np.random.default_rng(0).standard_normal(1000)


class TestDensityExport:
    def test_normal_peak(self, normal_sample):
        out = density_export(normal_sample, np.ones(1000), grid_size=401)
        at_zero = np.interp(0.0, out["grid_point"], out["unweighted_density"])
        assert at_zero == pytest.approx(1 / np.sqrt(2 * np.pi), abs=0.05)

    def test_integrates_to_one(self, normal_sample):
        w = np.random.default_rng(1).random(1000)
        out = density_export(normal_sample, w)
        for key in ("unweighted_density", "weighted_density"):
            assert trapezoid(out[key], out["grid_point"]) == pytest.approx(1.0, abs=0.01)

    def test_uniform_equal(self, normal_sample):
        out = density_export(normal_sample, np.full(1000, 3.0))
        np.testing.assert_array_equal(out["weighted_density"], out["unweighted_density"])

    def test_rescale_invariant(self, normal_sample):
        w = np.random.default_rng(2).random(1000)
        a = density_export(normal_sample, w)
        b = density_export(normal_sample, 17.0 * w)
        np.testing.assert_allclose(a["weighted_density"], b["weighted_density"], rtol=1e-12)

    def test_grid_shape(self):
        out = density_export([0.0, 1.0, 3.0], [1.0, 1.0, 1.0], grid_size=2)
        assert all(v.shape == (2,) for v in out.values())

    def test_degenerate(self):
        with pytest.raises(DegenerateData):
            density_export([2.0, 2.0, 2.0], [1.0, 1.0, 1.0])

    def test_small_grid(self):
        with pytest.raises(ValueError):
            density_export([0.0, 1.0], [1.0, 1.0], grid_size=1)
