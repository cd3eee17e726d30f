"""Least-squares Monte Carlo Picard solver on a mean-coupled equation.

Solves dY = -E[Y] dt + Z dB + K dNtilde with Y(T) = 1, whose mean obeys
the backward ODE ybar' = -ybar, so Y(0) = e.  Shows the two freezing
schemes, their iteration diagnostics, and the contraction ratios of the
solution map.
"""
import math

import numpy as np

from mfbsde import (
    DriverSpec,
    LevyMeasure,
    RegressionBasis,
    build_grid,
    constant,
    contraction_check,
    default_beta,
    mean_y,
    picard_full_freeze,
    picard_mean_freeze,
    simulate_ensemble,
)

grid = build_grid(1.0, 100)
levy = LevyMeasure.from_atoms([(1.0, 0.5)])
ens = simulate_ensemble(grid, levy, n_paths=30_000, seed=7)
basis = RegressionBasis(degree=2)

driver = DriverSpec(lambda t, y, z, k, mu: np.full_like(y, mu[0]),
                    lipschitz_c=1.0, mean_dim=1, name="mean-growth")

sol, rep = picard_full_freeze(driver, mean_y(), constant(1.0), ens, basis)
print(f"full freeze: Y(0) = {sol.y[:, 0].mean():.6f} (target e = "
      f"{math.e:.6f}), {rep.iterations} iterations")
print("  iterate differences:", ["%.2e" % d for d in rep.deltas])

sol2, rep2 = picard_mean_freeze(driver, constant(1.0), ens, basis,
                                tol=1e-12, max_iter=12)
print(f"\nmean freeze: Y(0) = {sol2.y[:, 0].mean():.6f}, "
      f"{rep2.iterations} outer iterations")
print("  outer differences:", ["%.2e" % d for d in rep2.deltas[:8]])
print("  the decay is factorial, not geometric: each ratio shrinks")
ratios = [rep2.deltas[i + 1] / rep2.deltas[i] for i in range(6)]
print("  consecutive ratios:", ["%.3f" % r for r in ratios])

beta = default_beta(driver, mean_y())
ratios = contraction_check(driver, mean_y(), constant(1.0), ens, basis,
                           beta=beta, n_pairs=10)
print(f"\ncontraction of the one-step map at weight beta={beta}: "
      f"max ratio {max(ratios):.3e} (bound 0.5)")
