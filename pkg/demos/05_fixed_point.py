"""Phi from a Picard iteration in a weighted Sobolev space, compared with the exit-time map."""

import numpy as np

from morsenorm.benchmarks import GOLDEN, golden_saddle_field
from morsenorm.flows import conjugacy_phi
from morsenorm.sobolev import (
    WeightedNormParams,
    delta_min,
    fixed_point_iterate,
    lemma_integration_constant,
)

G = golden_saddle_field()
lams = np.array([1.0, -GOLDEN])
x = np.array([0.2, 0.15])

print(f"C0(2) = {lemma_integration_constant(2.0):.12f}")
d = delta_min(G)
for delta in (d, 2 * d, 4 * d):
    traj, diag = fixed_point_iterate(G, lams, x, WeightedNormParams(2.0, 0, delta))
    print(f"delta = {delta:6.2f}: rho = {diag.rho:.4f}, {diag.iterations} iterations, Phi = {diag.phi}")

print("exit-time Phi        ", conjugacy_phi(G, lams, x))
