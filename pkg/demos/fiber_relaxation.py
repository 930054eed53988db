"""Relaxing the out-of-plane column of the barrier model.

W(F) = (1/det F - 1)^2 + |F|^2 penalizes compression and forbids
orientation reversal.  Minimizing over the third column leaves a density
W0 on 3x2 matrices.  We compare the 1D solver against the brute-force cube
search, then watch the orientation-constrained values come down to W0 as j
grows.
"""
import numpy as np

from membrane_relax import default_energy
from membrane_relax.energy_models import (fiber_minimizer, fiber_relax_constrained, fiber_relax_grid_oracle,
                                          sample_nondegenerate)

W = default_energy()
E12 = np.eye(3)[:, :2]

v, zeta = fiber_minimizer(W, E12)
print(f"W0(e1|e2) = {float(v):.15f} at zeta = {np.round(zeta, 8)}")

# the cube search is slow (1001^3 points) so one matrix is enough here
xi = sample_nondegenerate(np.random.default_rng(0), 1)[0]
o, z_o = fiber_relax_grid_oracle(W, xi)
print(f"solver {float(fiber_minimizer(W, xi)[0]):.10f}  grid oracle {o:.10f}")

print("\n   j   constrained value at (e1|e2)")
for j in (1, 2, 5, 10, 100, 1000):
    print(f"{j:>4}   {float(fiber_relax_constrained(W, E12, j)):.12f}")
