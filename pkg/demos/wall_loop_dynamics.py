"""Drive the wall through L = 1 -> 1.2 -> 1 and split the phase of the ground state.

For the transformed kind the extracted geometric phase tends to zero as the
loop slows down. For the effective kinds R = Ldot / L shrinks with the rate, so
the Berry phase and the leading non-adiabatic shift are of the same order; the
shift is even in R and cancels in (gamma_plus - gamma_minus) / 2.

    python3 demos/wall_loop_dynamics.py
"""
import warnings

import numpy as np

from geomphase.dynamics import WallSchedule, closed_path_reference, propagate
from geomphase.models import BoxModel

psi0 = np.zeros(12, dtype=complex)
psi0[0] = 1.0
print(f"{'tau':>5} {'kind':>16} {'gamma (dynamics)':>18} {'gamma (overlaps)':>18} {'leak':>9}")
for tau in (5.0, 10.0, 20.0):
    schedule = WallSchedule.cosine_loop(1.0, 0.1, tau)
    gam = {}
    for kind in ("transformed", "effective-plus", "effective-minus"):
        m = BoxModel(kind, basis_size=12)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ph = propagate(schedule, psi0, m, dt=1e-4, track=(1,)).phases[1]
        ref = closed_path_reference(m, schedule, 1)
        gam[kind] = ph.gamma[-1]
        print(f"{tau:5.0f} {kind:>16} {ph.gamma[-1]:18.8e} {ref:18.8e} {ph.leak:9.1e}")
    odd = 0.5 * (gam["effective-plus"] - gam["effective-minus"])
    print(f"{'':5} {'odd part':>16} {odd:18.8e}")
