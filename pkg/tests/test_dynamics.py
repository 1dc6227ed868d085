import math
import warnings

import numpy as np
import pytest

from geomphase.core import MeasureWeight, PhysicalConfig, measure_inner_product
from geomphase.dynamics import (
    WallSchedule,
    closed_path_reference,
    dilation_map,
    extract_phases,
    propagate,
    sine_synthesis,
)
from geomphase.errors import AdiabaticityWarning, PreconditionError, StabilityError, TrackingLostError
from geomphase.models import BoxModel


def ground(n_modes, model=None, L=1.0, ldot=0.0):
    if model is None:
        v = np.zeros(n_modes, dtype=complex)
        v[0] = 1.0
        return v
    return model.spectrum(model.point_from_wall(L, ldot)).states[:, 0]


def test_schedule_checks_velocity_consistency():
    with pytest.raises(PreconditionError):
        WallSchedule(lambda t: 1.0 + t, lambda t: 0.0, 1.0)
    with pytest.raises(PreconditionError):
        WallSchedule(lambda t: 1.0 - t, lambda t: -1.0, 2.0)  # wall reaches zero
    assert WallSchedule.cosine_loop(1.0, 0.1, 5.0).closed
    assert not WallSchedule.linear(1.0, 1.2, 5.0).closed
    s = WallSchedule.from_samples(np.linspace(0, 2, 41), 1.0 + 0.1 * np.linspace(0, 2, 41) ** 2)
    assert s.Ldot(1.0) == pytest.approx(0.2, rel=1e-6)


def test_static_wall_stationary_state():
    m = BoxModel("transformed", basis_size=6)
    psi0 = ground(6)
    tau = 10.0
    r = propagate(WallSchedule.static(1.0, tau), psi0, m, dt=5e-6)
    expected = np.exp(-1j * m.energies(1.0)[0] * tau) * psi0
    assert abs(np.vdot(expected, r.final_state)) ** 2 >= 1 - 1e-8
    assert abs(np.angle(np.vdot(expected, r.final_state))) <= 1e-8


def test_slow_ramp_is_adiabatic_and_fast_ramp_is_not():
    m = BoxModel("transformed", basis_size=8)
    infid = {}
    for tau in (2.0, 200.0):
        s = WallSchedule.linear(1.0, 1.1, tau)
        r = propagate(s, ground(8, m, 1.0, s.Ldot(0.0)), m)
        target = m.spectrum(m.point_from_wall(1.1, s.Ldot(tau))).states[:, 0]
        infid[tau] = 1 - abs(np.vdot(target, r.final_state)) ** 2
    assert 1 - infid[200.0] >= 0.999
    assert infid[2.0] > 10 * infid[200.0]


def test_stability_guard():
    m = BoxModel("transformed", basis_size=16)
    with pytest.raises(StabilityError):
        propagate(WallSchedule.static(1.0, 1.0), ground(16), m, dt=0.01)


def test_unitarity_and_time_reversal():
    m = BoxModel("effective-plus", basis_size=10)
    s = WallSchedule.cosine_loop(1.0, 0.1, 3.0)
    fwd = propagate(s, ground(10), m, dt=1e-4)
    assert np.max(np.abs(fwd.norms - 1)) <= 1e-9 * 3.0
    back = propagate(s, fwd.final_state, m, dt=1e-4, t_span=(3.0, 0.0))
    assert np.linalg.norm(back.final_state - ground(10)) <= 1e-10


def test_potential_hook_matches_shifted_energy():
    m = BoxModel("conventional", basis_size=6, potential=lambda L, n: 0.3 * np.eye(n))
    r = propagate(WallSchedule.static(1.0, 1.0), ground(6), m, dt=1e-4)
    e = m.energies(1.0)[0] + 0.3
    assert abs(np.vdot(np.exp(-1j * e) * ground(6), r.final_state) - 1) <= 1e-6


def test_dilation_map_examples():
    cfg = PhysicalConfig()
    rng = np.random.default_rng(2)
    x = np.linspace(0.0, 1.0, 4097)
    psi = rng.normal(size=x.size) + 1j * rng.normal(size=x.size)
    y, same = dilation_map(psi, 1.0, grid=x)
    assert np.max(np.abs(same - psi)) <= 1e-14 and np.array_equal(y, x)
    c = rng.normal(size=8) + 1j * rng.normal(size=8)
    c /= np.linalg.norm(c)
    for L in (0.6, 1.7):
        y, v = dilation_map(c, L, coefficients=True, grid=x)
        assert abs(measure_inner_product(y, v, v, MeasureWeight(L)) - 1.0) <= 1e-6
    y, v = dilation_map(np.sqrt(2) * np.sin(np.pi * x), 2.0, grid=x, config=cfg)
    assert np.max(np.abs(v - np.sin(np.pi * y / 2.0))) <= 1e-9
    _, back = dilation_map(v, 2.0, "inverse", grid=y)
    assert np.max(np.abs(back - np.sqrt(2) * np.sin(np.pi * x))) <= 1e-12


def test_sine_synthesis_mode():
    x = np.linspace(0, 1.5, 11)
    assert np.allclose(sine_synthesis([0, 1], 1.5, x), math.sqrt(2 / 1.5) * np.sin(2 * np.pi * x / 1.5))


def test_static_wall_geometric_phase_vanishes():
    m = BoxModel("transformed", basis_size=8)
    r = propagate(WallSchedule.static(1.0, 5.0), ground(8), m, dt=2e-5, track=(1,))
    assert np.max(np.abs(r.phases[1].gamma)) <= 1e-6


def test_transformed_closed_schedule_has_trivial_phase():
    m = BoxModel("transformed", basis_size=12)
    s = WallSchedule.cosine_loop(1.0, 0.1, 10.0)
    r = propagate(s, ground(12), m, dt=1e-4, track=(1,))
    ph = r.phases[1]
    assert abs(ph.gamma[-1]) <= 5e-4
    assert abs(closed_path_reference(m, s, 1)) <= 1e-10
    rec = ph.final
    assert rec.total == pytest.approx(rec.dynamical + rec.geometric, abs=1e-12)


def test_extraction_error_falls_with_rate():
    m = BoxModel("transformed", basis_size=12)
    errs = []
    for tau in (5.0, 10.0):
        s = WallSchedule.cosine_loop(1.0, 0.1, tau)
        r = propagate(s, ground(12), m, dt=1e-4, track=(1,))
        errs.append(abs(r.phases[1].gamma[-1] - closed_path_reference(m, s, 1)))
    assert errs[1] <= errs[0] / 2


def test_tracking_lost():
    m = BoxModel("transformed", basis_size=6)
    psi = np.zeros(6, dtype=complex)
    psi[1] = 1.0
    r = propagate(WallSchedule.static(1.0, 0.1), psi, m)
    with pytest.raises(TrackingLostError):
        extract_phases(r, n=1)


def test_fast_schedule_warns_about_adiabaticity():
    m = BoxModel("transformed", basis_size=10)
    s = WallSchedule.cosine_loop(1.0, 0.15, 0.5)
    with pytest.warns(AdiabaticityWarning):
        r = propagate(s, ground(10), m, track=(1,))
    assert r.phases[1].leak > 1e-3


def test_default_sampling_keeps_phase_steps_small():
    m = BoxModel("transformed", basis_size=8)
    r = propagate(WallSchedule.static(1.0, 2.0), ground(8), m, track=(1,))
    steps = np.diff(r.phases[1].alpha)
    assert np.max(np.abs(steps)) <= math.pi / 4 + 1e-9
