"""Reweight a skewed sample so that it looks like its population.

The population has sex, age and an outcome y that depends on both. The
sample over-represents units with small y, so its plain mean of y is too
low. Calibrating on (sex, age) alone recovers the population mean because
selection depends on y only through those two columns.

    python3 demos/direct_standardization.py
"""
import numpy as np

from empcal import calibrate, density_export, estimate_weighted_mean
from empcal.simulation import generate_direct_standardization

population, sample = generate_direct_standardization(n_pop=10_000, n_sample=100, seed=0)
print(f"population: {len(population)} rows, sample: {len(sample)} rows")

cols = ["sex", "age"]
print("\ncovariate means")
print("  population:", population[cols].mean().round(3).to_dict())
print("  sample:    ", sample[cols].mean().round(3).to_dict())

result = calibrate(sample[cols], population[cols])
print(f"\ncalibration success: {result.success}, "
      f"effective sample size {result.effective_sample_size:.1f} of {len(sample)}")
print("  weighted sample:", dict(zip(cols, np.round(result.weights @ sample[cols].to_numpy(), 3))))

y = sample["y"].to_numpy()
print("\nmean of y")
print(f"  population       {population['y'].mean():.3f}")
print(f"  sample           {y.mean():.3f}")
print(f"  weighted sample  {estimate_weighted_mean(y, result.weights):.3f}")

# Density of y before and after weighting, as a table for any plotting tool.
dens = density_export(y, result.weights, grid_size=9)
print("\n      y   unweighted   weighted")
for g, u, w in zip(dens["grid_point"], dens["unweighted_density"], dens["weighted_density"]):
    print(f"{g:7.2f}   {u:10.4f} {w:10.4f}")
