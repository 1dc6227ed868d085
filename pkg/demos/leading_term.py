"""Shrink a rectangle in the (L, R) plane and watch the exact Berry phase of the
effective-plus model approach S_1 (-16 M / pi^2 hbar) times the loop integral of R L dL.

    python3 demos/leading_term.py
"""
import math

from geomphase.berry import discrete_berry_phase, leading_connection_sum
from geomphase.core import ParameterPath
from geomphase.models import BoxModel

model = BoxModel("effective-plus", basis_size=32)
s1, tail = leading_connection_sum(1, 10 ** 5)
print(f"S_1 = {s1:.15f}  (tail bound {tail:.1e})")
print(f"{'eps_max':>8} {'gamma (overlaps)':>18} {'leading term':>14} {'ratio':>10}")
la, lb = 1.0, 1.2
for eps_max in (1e-1, 3e-2, 1e-2, 3e-3, 1e-3):
    rb = eps_max / (model.config.mass * lb ** 2)
    path = ParameterPath.rectangle((la, lb), (0.0, rb), 40)
    gamma = discrete_berry_phase([model.spectrum(q) for q in path.points], 1, model.basis_overlap)
    loop = -rb * (lb ** 2 - la ** 2) / 2
    lead = s1 * (-16 * model.config.mass / (math.pi ** 2 * model.config.hbar)) * loop
    print(f"{eps_max:8.0e} {gamma:18.10e} {lead:14.6e} {gamma / lead:10.6f}")
