"""What happens when exact balance is impossible or weights are capped.

    python3 demos/relaxation_and_bounds.py
"""
import numpy as np

from empcal import calibrate, maybe_exact_calibrate

x = np.array([[0.0], [1.0], [2.0]])

# Mean 0.5 over {0, 1, 2}: both losses, with their different shapes.
for objective in ("quadratic", "entropy"):
    r = calibrate(x, [0.5], objective=objective)
    print(f"{objective:>9}: weights {np.round(r.weights, 4)}  ESS {r.effective_sample_size:.3f}")

# Capping the largest weight moves mass to the other units.
r = calibrate(x, [0.5], max_weight=0.55)
print(f"\nmax_weight 0.55: weights {np.round(r.weights, 4)}  success {r.success}")
# Mean 0.5 needs the first weight to be at least 0.5.
r = calibrate(x, [0.5], max_weight=0.45)
print(f"max_weight 0.45: success {r.success} ({r.message})")

# A target outside the range of the data cannot be hit. With a fixed
# tolerance the weights get as close as the tolerance allows.
two = np.array([[0.0], [1.0]])
print(f"\ntarget 5 from {{0, 1}} exactly: success {calibrate(two, [5.0]).success}")
r = calibrate(two, [5.0], l2_norm=4.2)
print(f"l2_norm 4.2: weights {np.round(r.weights, 4)}  |gap| {r.balance_l2:.4f}")

# maybe_exact_calibrate searches for the smallest tolerance that works.
r, eps = maybe_exact_calibrate(two, [5.0])
print(f"smallest workable l2_norm {eps:.6f}, weights {np.round(r.weights, 6)}")

# More constraints than units: exact balance is generically impossible.
rng = np.random.default_rng(1)
xs, target = rng.normal(size=(3, 6)), rng.normal(size=6)
r, eps = maybe_exact_calibrate(xs, target)
print(f"\n3 units, 6 covariates: l2_norm {eps:.4f}, weights {np.round(r.weights, 4)}")
