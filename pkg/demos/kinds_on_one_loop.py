"""The same closed loop in (L, R) under every Hamiltonian kind.

Fixed-basis kinds and the conventional box give no phase; the two effective
kinds give equal and opposite phases.

    python3 demos/kinds_on_one_loop.py
"""
from geomphase.berry import discrete_berry_phase
from geomphase.core import ParameterPath
from geomphase.models import BoxModel, ModelKind

path = ParameterPath.rectangle((1.0, 1.2), (0.0, 0.02), 40)
print(f"{'kind':>16} {'gamma_1':>14} {'gamma_2':>14}")
for kind in ModelKind:
    m = BoxModel(kind, basis_size=24)
    snaps = [m.spectrum(q) for q in path.points]
    overlap = m.basis_overlap if m.moving_basis else None
    g = [discrete_berry_phase(snaps, n, overlap) for n in (1, 2)]
    print(f"{kind.value:>16} {g[0]:14.6e} {g[1]:14.6e}")
