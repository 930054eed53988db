"""Kohn-Strang lamination on a double well and on the barrier density.

For two wells differing by a rank-one matrix, one lamination step already
brings the midpoint to zero.  The barrier density W0 is not rank-one convex
either: a single split lowers it at many points.
"""
import numpy as np

from membrane_relax import base_density, default_energy, laminate_envelope, laminate_step, rank_one_double_well
from membrane_relax.energy_models import sample_nondegenerate

E12 = np.eye(3)[:, :2]
well = rank_one_double_well(E12, [1.0, 0.0], [1.0, 0.0, 0.0])
v, p = laminate_step(well, E12)
print(f"double well: f(mid) = {float(well(E12)):.3f}, R1 = {float(v):.2e}, t = {p.t:.3f}, a = {p.a}, b = {p.b}")

W0 = base_density(default_energy())
for xi in sample_nondegenerate(np.random.default_rng(1), 3):
    vals = [float(W0(xi))] + [float(r) for r in laminate_envelope(W0, xi, 2)]
    print("W0, R1, R2:", "  ".join(f"{x:.6f}" for x in vals))
