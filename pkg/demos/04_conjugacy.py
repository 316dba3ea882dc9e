"""The exit-time conjugacy on the golden saddle.

G is the truncated field (equal to V0 outside the unit ball), F the linear
flow. Phi(x) = G_T F_{-T}(x) once F_{-T}(x) has left the ball.
"""

import numpy as np

from morsenorm.benchmarks import GOLDEN, golden_saddle_field
from morsenorm.flows import conjugacy_phi, conjugacy_residual

G = golden_saddle_field()
lams = np.array([1.0, -GOLDEN])

g = np.linspace(-0.25, 0.25, 5)
X = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
phi = conjugacy_phi(G, lams, X)
res = conjugacy_residual(G, lams, X, phi=phi)

print("   x1      x2   |  Phi_1     Phi_2   | residual")
for x, p, r in zip(X, phi, res):
    print(f"{x[0]:6.3f}  {x[1]:6.3f} | {p[0]:8.5f}  {p[1]:8.5f} | {r:.1e}")

# points on the unstable axis never leave it, so Phi is the identity there
print("unstable axis:", conjugacy_phi(G, lams, np.array([0.2, 0.0])))
