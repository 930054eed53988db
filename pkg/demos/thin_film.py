"""Thin films u(x, x3) = v(x) + x3 phi(x) as the thickness goes to zero.

The undeformed film has energy exactly 3 at every thickness.  With a
director that varies across the film the gap to the limit energy shrinks;
since the first-order term is odd in x3 it cancels and the gap goes like
eps^2.
"""
from membrane_relax import default_energy, recovery_experiment
from membrane_relax.thin_film import identity_ansatz, sine_director_ansatz

W = default_energy()
for u in (identity_ansatz(), sine_director_ansatz(amplitude=0.1)):
    rep = recovery_experiment(W, u)
    print(f"{rep.label}: limit {rep.limit:.10f}, threshold {rep.threshold:g}, slope {rep.slope:.4f}")
    for row in rep.rows():
        print(f"  eps {row['eps']:.0e}  energy {row['energy']:.12f}  gap {row['abs_gap']:.3e}  "
              f"min det {row['min_det']:.4f}")
