"""Simulation designs with known truth.

Random numbers come from numpy's Philox counter-based generator; normal
variates use numpy's ziggurat sampler. Replicate `r` of a study seeded with
`seed` draws from its own stream keyed by `SeedSequence([seed, r])`, so
results do not depend on the order in which replicates run.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .calibration import estimate_att, estimate_weighted_mean, maybe_exact_calibrate
from .core import Objective

OUTCOME_INTERCEPT = 210.0
OUTCOME_COEF = np.array([27.4, 13.7, 13.7, 13.7])
PROPENSITY_COEF = np.array([-1.0, 0.5, -0.25, -0.1])


def make_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate])))


@dataclass(frozen=True)
class KangSchaferSample:
    z: np.ndarray
    x: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    propensity: np.ndarray

    @property
    def treated(self) -> np.ndarray:
        return self.treatment == 1

    def expanded_x(self) -> np.ndarray:
        return expand_covariates(self.x)


def misspecify(z: np.ndarray) -> np.ndarray:
    """Nonlinear distortion of the true covariates observed in their place."""
    z1, z2, z3, z4 = z.T
    return np.column_stack([
        np.exp(z1 / 2.0),
        z2 / (1.0 + np.exp(z1)) + 10.0,
        (z1 * z3 / 25.0 + 0.6) ** 3,
        (z2 + z4 + 20.0) ** 2,
    ])


def expand_covariates(x: np.ndarray) -> np.ndarray:
    """X columns, their 6 pairwise products, and their logs (X is positive)."""
    p = x.shape[1]
    products = [x[:, i] * x[:, j] for i in range(p) for j in range(i + 1, p)]
    return np.column_stack([x, *products, np.log(x)])


def generate_kang_schafer(n: int, seed: int, replicate: int = 0) -> KangSchaferSample:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed, replicate)
    z = rng.standard_normal((n, 4))
    propensity = 1.0 / (1.0 + np.exp(-(z @ PROPENSITY_COEF)))
    treatment = (rng.random(n) < propensity).astype(int)
    outcome = OUTCOME_INTERCEPT + z @ OUTCOME_COEF + rng.standard_normal(n)
    return KangSchaferSample(z, misspecify(z), treatment, outcome, propensity)


class CovariateSet(enum.Enum):
    TRUE_Z = "true-z"
    MISSPECIFIED_X = "misspecified-x"
    EXPANDED_X = "expanded-x"
    UNWEIGHTED = "unweighted"

    def matrix(self, sample: KangSchaferSample) -> Optional[np.ndarray]:
        if self is CovariateSet.TRUE_Z:
            return sample.z
        if self is CovariateSet.MISSPECIFIED_X:
            return sample.x
        if self is CovariateSet.EXPANDED_X:
            return sample.expanded_x()
        return None


@dataclass(frozen=True)
class ReplicationSummary:
    """Bias and RMSE of an estimator over replicates.

    `estimates` and `truths` are per replicate; `l2_norms` holds the
    relaxation radius each calibration ended at (0 for exact balance).
    """

    label: str
    n_replicates: int
    bias: float
    rmse: float
    estimates: np.ndarray
    truths: np.ndarray
    l2_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_estimates(cls, label, estimates, truths, l2_norms=None) -> "ReplicationSummary":
        estimates = np.asarray(estimates, dtype=float)
        truths = np.broadcast_to(np.asarray(truths, dtype=float), estimates.shape).copy()
        errors = estimates - truths
        l2 = np.zeros(estimates.shape[0]) if l2_norms is None else np.asarray(l2_norms, dtype=float)
        return cls(label, int(estimates.shape[0]), float(errors.mean()),
                   float(np.sqrt(np.mean(errors ** 2))), estimates, truths, l2)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n_replicates": self.n_replicates,
            "bias": self.bias,
            "rmse": self.rmse,
            "n_relaxed": int(np.count_nonzero(self.l2_norms > 0)),
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["replicate", "estimate", "truth", "error", "l2_norm"])
            for i, (est, truth, eps) in enumerate(zip(self.estimates, self.truths, self.l2_norms)):
                writer.writerow([i, repr(float(est)), repr(float(truth)),
                                 repr(float(est - truth)), repr(float(eps))])


def _check_study(n, replicates):
    if n < 50:
        raise ValueError("n must be at least 50")
    if replicates < 1:
        raise ValueError("replicates must be at least 1")


def run_att_study(n: int = 1000, replicates: int = 100,
                  covariate_set: CovariateSet = CovariateSet.TRUE_Z,
                  objective=Objective.ENTROPY, seed: int = 0) -> ReplicationSummary:
    """ATT estimates with controls calibrated to the treated covariate means.

    The true ATT is zero, so the mean estimate is the bias.
    """
    _check_study(n, replicates)
    covariate_set = CovariateSet(covariate_set)
    estimates, l2_norms = [], []
    for r in range(replicates):
        sample = generate_kang_schafer(n, seed, r)
        treated = sample.treated
        y_t, y_c = sample.outcome[treated], sample.outcome[~treated]
        cov = covariate_set.matrix(sample)
        if cov is None:
            weights, eps = None, 0.0
        else:
            result, eps = maybe_exact_calibrate(cov[~treated], cov[treated], objective=objective)
            weights = result.weights
        estimates.append(estimate_att(y_t, y_c, weights))
        l2_norms.append(eps)
    return ReplicationSummary.from_estimates(
        f"att/{covariate_set.value}", estimates, 0.0, l2_norms)


def run_population_mean_study(n: int = 1000, replicates: int = 100,
                              objective=Objective.ENTROPY, seed: int = 0,
                              covariate_set: CovariateSet = CovariateSet.TRUE_Z,
                              ) -> ReplicationSummary:
    """Population mean from treated units calibrated to the full sample."""
    _check_study(n, replicates)
    covariate_set = CovariateSet(covariate_set)
    estimates, l2_norms = [], []
    for r in range(replicates):
        sample = generate_kang_schafer(n, seed, r)
        treated = sample.treated
        y_t = sample.outcome[treated]
        cov = covariate_set.matrix(sample)
        if cov is None:
            estimates.append(float(y_t.mean()))
            l2_norms.append(0.0)
            continue
        result, eps = maybe_exact_calibrate(cov[treated], cov, objective=objective)
        estimates.append(estimate_weighted_mean(y_t, result.weights))
        l2_norms.append(eps)
    return ReplicationSummary.from_estimates(
        f"population-mean/{covariate_set.value}", estimates, OUTCOME_INTERCEPT, l2_norms)


def generate_direct_standardization(n_pop: int = 1000, n_sample: int = 100, seed: int = 0,
                                    tilt: float = 0.3, tilt_on: str = "signal",
                                    replicate: int = 0) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Population with sex, age and y, and a sample skewed toward small y.

    The population follows sex ~ Bernoulli(0.5), age ~ Uniform(10, 60) and
    y ~ N(5 sex + 0.1 age, 1). The sample is drawn without replacement with
    probability proportional to `exp(-tilt * s)`, where `s` is the systematic
    part `5 sex + 0.1 age` (`tilt_on="signal"`) or the realized `y`
    (`tilt_on="outcome"`). Only the former is ignorable given (sex, age).
    """
    if n_sample > n_pop:
        raise ValueError("n_sample cannot exceed n_pop")
    if tilt_on not in ("signal", "outcome"):
        raise ValueError(f"tilt_on must be 'signal' or 'outcome', got {tilt_on!r}")
    rng = make_rng(seed, replicate)
    sex = (rng.random(n_pop) < 0.5).astype(int)
    age = rng.uniform(10.0, 60.0, n_pop)
    signal = 5.0 * sex + 0.1 * age
    y = signal + rng.standard_normal(n_pop)
    population = pd.DataFrame({"sex": sex, "age": age, "y": y})
    score = signal if tilt_on == "signal" else y
    logits = -tilt * score
    prob = np.exp(logits - logits.max())
    prob /= prob.sum()
    idx = np.sort(rng.choice(n_pop, size=n_sample, replace=False, p=prob))
    return population, population.iloc[idx].reset_index(drop=True)


@dataclass(frozen=True)
class StandardizationOutcome:
    population_mean: float
    sample_mean: float
    weighted_mean: float
    l2_norm: float
    weights: np.ndarray


def run_direct_standardization(n_pop: int = 1000, n_sample: int = 100, seed: int = 0,
                               objective=Objective.ENTROPY, replicate: int = 0,
                               **skew) -> StandardizationOutcome:
    population, sample = generate_direct_standardization(
        n_pop, n_sample, seed, replicate=replicate, **skew)
    cols = ["sex", "age"]
    result, eps = maybe_exact_calibrate(sample[cols], population[cols], objective=objective)
    y = sample["y"].to_numpy()
    return StandardizationOutcome(
        population_mean=float(population["y"].mean()),
        sample_mean=float(y.mean()),
        weighted_mean=estimate_weighted_mean(y, result.weights),
        l2_norm=eps,
        weights=result.weights,
    )


def run_direct_standardization_study(n_pop: int = 1000, n_sample: int = 100,
                                     replicates: int = 100, objective=Objective.ENTROPY,
                                     seed: int = 0) -> ReplicationSummary:
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    runs = [run_direct_standardization(n_pop, n_sample, seed, objective, replicate=r)
            for r in range(replicates)]
    return ReplicationSummary.from_estimates(
        "direct-standardization",
        [o.weighted_mean for o in runs],
        [o.population_mean for o in runs],
        [o.l2_norm for o in runs])
