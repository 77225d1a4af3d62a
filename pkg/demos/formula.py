"""Squares, interactions and categorical columns through a formula.

    python3 demos/formula.py
"""
import numpy as np
import pandas as pd

from empcal import from_formula
from empcal.formula import build_design, parse_formula

rng = np.random.default_rng(4)
n = 400
df = pd.DataFrame({
    "x1": rng.normal(size=n),
    "x2": rng.normal(size=n),
    "x3": rng.uniform(size=n),
    "x4": rng.uniform(size=n),
    "region": rng.choice(["north", "south", "west"], size=n),
})
# The target over-weights large x1 and the west region.
keep = rng.random(n) < 1 / (1 + np.exp(-df["x1"] - (df["region"] == "west")))
target = df[keep]

formula = parse_formula("~ -1 + x1 + x2 ** 2 + x3:x4 + region")
print("terms:", [str(t) for t in formula.terms])
print("design columns:", build_design(formula, df).column_names)

result, eps = from_formula(str(formula), df, target)
print(f"\nsuccess {result.success}, l2_norm used {eps}, ESS {result.effective_sample_size:.1f}")

design = build_design(formula, df)
target_design = build_design(formula, target, levels_from=df)
print(f"\n{'column':>14} {'target':>8} {'sample':>8} {'weighted':>8}")
for j, name in enumerate(design.column_names):
    print(f"{name:>14} {target_design.values[:, j].mean():8.3f} "
          f"{design.values[:, j].mean():8.3f} {result.weights @ design.values[:, j]:8.3f}")
