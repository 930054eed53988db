"""The zig-zag laminate on the unit square.

sigma_n has gradient -t a on one band and (1 - t) a on the other, with
triangular corrections near the top and bottom edges so it vanishes on the
boundary.  Its energy tends to the two-point lamination value like 1/n.
"""
import numpy as np

from membrane_relax import LaminateGeometry, LaminateParams, base_density, default_energy, two_point_value
from membrane_relax.microstructure import laminate_energy_quadrature, region_measures, region_raster

geom = LaminateGeometry(4, 0.3)
print(region_raster(geom, 40))
print({r.name: round(m, 4) for r, m in region_measures(geom).items()})

W0 = base_density(default_energy())
xi = np.eye(3)[:, :2]
b = np.array([0.3, 0.2, 0.0])
params = LaminateParams.from_angle(0.0, b, 0.4)
target = float(two_point_value(W0, xi, params))
print(f"\ntwo-point value {target:.8f}")
for n in (4, 8, 16, 32, 64, 128):
    e = float(laminate_energy_quadrature(W0, xi, LaminateGeometry(n, 0.4), b))
    print(f"n={n:>4}  energy {e:.8f}  n * gap {n * abs(e - target):.5f}")
