"""Treatment effect on the treated in the Kang-Schafer design.

The true effect is zero. Treated units have lower outcomes only because of
their covariates, so a raw comparison is badly biased. Weighting the
controls to match the treated on the true covariates Z removes the bias;
matching on the distorted covariates X removes only part of it, and adding
interactions and logs of X helps further.

    python3 demos/kang_schafer.py [replicates]
"""
import sys

from empcal import balance_report, calibrate
from empcal.core import CovariateMatrix, TargetMoments
from empcal.simulation import CovariateSet, generate_kang_schafer, run_att_study

replicates = int(sys.argv[1]) if len(sys.argv) > 1 else 100

# One replicate in detail.
sample = generate_kang_schafer(1000, seed=0)
t = sample.treated
print(f"{t.sum()} treated, {(~t).sum()} controls")
print(f"mean outcome: treated {sample.outcome[t].mean():.2f}, control {sample.outcome[~t].mean():.2f}")

result = calibrate(sample.x[~t], sample.x[t])
report = balance_report(CovariateMatrix(sample.z[~t], ("z1", "z2", "z3", "z4")),
                        TargetMoments.from_rows(sample.z[t]), result)
print("\nbalance on the true Z after matching on the observed X:")
print(report.to_text())

print(f"\nbias and RMSE over {replicates} replicates (n = 1000)")
print(f"{'covariates':>15} {'bias':>9} {'rmse':>9}")
for cs in (CovariateSet.UNWEIGHTED, CovariateSet.TRUE_Z,
           CovariateSet.MISSPECIFIED_X, CovariateSet.EXPANDED_X):
    s = run_att_study(1000, replicates, cs, seed=0)
    print(f"{cs.value:>15} {s.bias:9.3f} {s.rmse:9.3f}")
