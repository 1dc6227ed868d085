import math

import numpy as np
import pytest
from scipy import integrate

from geomphase import rspt
from geomphase.core import MeasureWeight, ParameterPoint, PhysicalConfig, box_grid, measure_inner_product
from geomphase.errors import DomainError, NoCouplingError, PreconditionError
from geomphase.models import (
    BoxModel,
    ModelKind,
    box_energy,
    conventional_eigenfunction,
    cross_box_overlap,
    dilation_element,
    dilation_matrix,
)

from oracles import effective_c1, transformed_c1


def test_box_energy_examples():
    assert box_energy(1, math.pi) == pytest.approx(0.5, abs=1e-15)
    assert box_energy(2, 1.0) == pytest.approx(19.7392088, abs=1e-7)
    assert box_energy(3, 2.4) == pytest.approx(box_energy(3, 1.2) / 4, rel=1e-15)
    with pytest.raises(DomainError):
        box_energy(1, 0.0)


def _dilation_quadrature(m, n, L=1.0, hbar=1.0):
    # -i hbar int (2/L) sin(m pi x/L) (x d/dx + 1/2) sin(n pi x/L) dx
    k = n * math.pi / L
    f = lambda x: (2 / L) * math.sin(m * math.pi * x / L) * (x * k * math.cos(k * x) + 0.5 * math.sin(k * x))
    val, _ = integrate.quad(f, 0.0, L, limit=200, epsabs=1e-13)
    return -1j * hbar * val


def test_dilation_element_examples():
    assert dilation_element(1, 2) == pytest.approx(4j / 3, abs=1e-15)
    assert abs(_dilation_quadrature(1, 2) - 4j / 3) < 1e-10
    assert abs(_dilation_quadrature(2, 5, L=1.7) - dilation_element(2, 5, L=1.7)) < 1e-10
    assert dilation_element(3, 3) == 0
    d = dilation_matrix(30)
    assert np.array_equal(d, d.conj().T)
    # divided by the gap the element reproduces the effective first-order coefficient
    gap = box_energy(1, 1.0) - box_energy(2, 1.0)
    assert dilation_element(2, 1) / gap == pytest.approx(effective_c1(2, 1), abs=1e-15)


def test_coupling_and_first_order_examples():
    p = ParameterPoint.of(L=1.0, R=0.0)
    tr = BoxModel("transformed", basis_size=8)
    ef = BoxModel("effective-plus", basis_size=8)
    _, c_tr = rspt.first_order(tr.base_spectrum(p), tr.coupling_matrix(1.0))
    _, c_ef = rspt.first_order(ef.base_spectrum(p), ef.coupling_matrix(1.0))
    assert c_tr[1, 0] == pytest.approx(-8j / (9 * math.pi ** 2), abs=1e-15)
    assert c_ef[1, 0] == pytest.approx(8j / (9 * math.pi ** 2), abs=1e-15)
    assert c_tr[1, 0] == pytest.approx(transformed_c1(2, 1), abs=1e-15)
    with pytest.raises(NoCouplingError):
        BoxModel("conventional").coupling_matrix(1.0)
    with pytest.raises(NoCouplingError):
        BoxModel("effective-mass").eps(p)


def test_eps_rules():
    tr = BoxModel("transformed", PhysicalConfig(mass=1.0), 8)
    assert tr.eps(tr.point_from_wall(2.0, 0.01)) == pytest.approx(0.02, abs=1e-15)
    ef = BoxModel("effective-plus", PhysicalConfig(mass=2.0), 8)
    q = ef.point_from_wall(1.5, 0.3)
    assert q["R"] == pytest.approx(0.2)
    assert ef.eps(q) == pytest.approx(2.0 * 1.5 ** 2 * 0.2)


def test_effective_minus_flips_coupling_sign():
    plus = BoxModel("effective-plus", basis_size=6).coupling_matrix(1.3).entries
    minus = BoxModel("effective-minus", basis_size=6).coupling_matrix(1.3).entries
    assert np.array_equal(plus, -minus)


def test_cross_box_overlap_examples():
    assert cross_box_overlap(2, 1.0, 2, 1.0) == 1.0
    assert cross_box_overlap(1, 1.0, 3, 1.0) == 0.0
    x = np.linspace(0.0, 1.0, 4096)
    f = math.sqrt(2.0) * np.sin(np.pi * x)
    g = math.sqrt(2 / 1.1) * np.sin(np.pi * x / 1.1)
    quad = measure_inner_product(x, f, g, MeasureWeight(1.0)).real
    assert abs(cross_box_overlap(1, 1.0, 1, 1.1) - quad) <= 1e-6
    exact, _ = integrate.quad(lambda s: math.sqrt(2.0) * math.sin(math.pi * s) * math.sqrt(2 / 1.1)
                              * math.sin(math.pi * s / 1.1), 0.0, 1.0, epsabs=1e-14)
    assert abs(cross_box_overlap(1, 1.0, 1, 1.1) - exact) <= 1e-9


def test_conventional_eigenfunction_examples():
    L = 1.3
    x = box_grid(L)
    phi = conventional_eigenfunction(2, L, x)
    assert abs(phi[0]) < 1e-15 and abs(phi[-1]) < 1e-12
    assert abs(measure_inner_product(x, phi, phi, MeasureWeight(L)) - 1.0) <= 1e-8


def test_model_validation():
    with pytest.raises(PreconditionError):
        BoxModel("transformed", basis_size=3)
    with pytest.raises(PreconditionError):
        BoxModel("nonsense")
    with pytest.raises(PreconditionError):
        BoxModel("transformed", potential=lambda L, n: np.zeros((n, n)))
    assert ModelKind.parse("Effective_Plus") is ModelKind.EFFECTIVE_PLUS


def test_hamiltonian_hermitian_and_spectrum_ordered():
    for kind in ModelKind:
        m = BoxModel(kind, basis_size=10)
        s = m.spectrum(ParameterPoint.of(L=1.2, R=0.01))
        assert np.all(np.diff(s.energies) > 0)


def test_potential_hook_for_conventional_kind():
    def pot(L, n):
        return 0.5 * np.eye(n)
    m = BoxModel("conventional", basis_size=6, potential=pot)
    s = m.spectrum(ParameterPoint.of(L=1.0))
    assert np.allclose(s.energies, m.energies(1.0) + 0.5)


def test_analytic_connection_matches_closed_form():
    m = BoxModel("effective-plus", basis_size=5)
    a = m.analytic_connection(ParameterPoint.of(L=2.0, R=0.0), "L")
    assert a[0, 1] == pytest.approx(4j / 3 / 2.0, abs=1e-15)
    assert np.all(BoxModel("transformed", basis_size=5).analytic_connection(ParameterPoint.of(L=2.0), "L") == 0)
