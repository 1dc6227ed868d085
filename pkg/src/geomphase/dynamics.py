"""Moving-wall Schroedinger dynamics on the fixed reference domain.

The state is carried as coefficients c_n in a sine basis. For the fixed-basis
kinds these are the coefficients of psi' on [0, L0]; for moving-basis kinds
they refer to the instantaneous [0, L(t)] basis. The dilation map identifies
the two, mode by mode, so every kind evolves under

    i hbar dc/dt = (diag E(L) + c(t) D) c

with a kind-specific rate c(t) (see ``BoxModel.evolution_rate``). The
propagator is the Cayley form (1 + i dt H/2hbar)^-1 (1 - i dt H/2hbar) with H
at the step midpoint: unitary, time symmetric and second order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import interpolate

from .berry import discrete_berry_phase
from .core import (
    PhaseRecord,
    PhysicalConfig,
    SpectrumSnapshot,
    _frozen,
    cumulative_trapezoid,
)
from .errors import (
    AdiabaticityWarning,
    DomainError,
    IntegratorFault,
    PreconditionError,
    SamplingError,
    StabilityError,
    TrackingLostError,
)
from .models import BoxModel, ModelKind

STABILITY_LIMIT = 0.1
DEFAULT_DT_FACTOR = 1e-3
NORM_TOL_PER_TIME = 1e-9
LEAK_THRESHOLD = 1e-3
TRACKING_FLOOR = 0.5
UNWRAP_GUARD = math.pi / 2
SAMPLE_PHASE_STEP = math.pi / 4
LDOT_TOL = 1e-6


@dataclass(frozen=True)
class WallSchedule:
    """Wall position L(t) and velocity Ldot(t) on [0, tau]."""

    L: Callable[[float], float]
    Ldot: Callable[[float], float]
    tau: float
    name: str = "custom"
    check_points: int = 401

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise PreconditionError(f"tau must be > 0, got {self.tau}")
        t = np.linspace(0.0, self.tau, self.check_points)
        lv = np.array([self.L(s) for s in t], dtype=float)
        ld = np.array([self.Ldot(s) for s in t], dtype=float)
        if not (np.all(np.isfinite(lv)) and np.all(np.isfinite(ld))):
            raise PreconditionError("schedule produced non-finite values")
        if np.any(lv <= 0):
            raise DomainError("wall separation must stay > 0")
        h = 1e-4 * self.tau
        fd = np.array([self._fd(s, h) for s in t])
        scale = max(1.0, float(np.max(np.abs(ld))))
        worst = float(np.max(np.abs(fd - ld)))
        if worst > LDOT_TOL * scale:
            raise PreconditionError(f"Ldot inconsistent with L (max deviation {worst:.2e})")

    def _fd(self, t, h):
        # central differences clipped to [0, tau], Richardson-combined
        def cd(step):
            a, b = max(t - step, 0.0), min(t + step, self.tau)
            return (self.L(b) - self.L(a)) / (b - a)

        if 0 < t - h and t + h < self.tau:
            return (4 * cd(h / 2) - cd(h)) / 3
        # one-sided at the ends: second-order three-point formula
        s = h if t + 2 * h <= self.tau else -h
        return (-3 * self.L(t) + 4 * self.L(t + s) - self.L(t + 2 * s)) / (2 * s)

    @classmethod
    def linear(cls, l_start: float, l_end: float, tau: float) -> "WallSchedule":
        rate = (l_end - l_start) / tau
        return cls(lambda t: l_start + rate * t, lambda t: rate, tau, "linear")

    @classmethod
    def cosine_loop(cls, l_start: float, amplitude: float, tau: float) -> "WallSchedule":
        """Closed schedule L = l_start + a (1 - cos(2 pi t / tau)), at rest at both ends."""
        w = 2 * math.pi / tau
        return cls(lambda t: l_start + amplitude * (1 - math.cos(w * t)),
                   lambda t: amplitude * w * math.sin(w * t), tau, "cosine-loop")

    @classmethod
    def static(cls, length: float, tau: float) -> "WallSchedule":
        return cls(lambda t: length, lambda t: 0.0, tau, "static")

    @classmethod
    def from_callables(cls, L, Ldot, tau) -> "WallSchedule":
        return cls(L, Ldot, tau)

    @classmethod
    def from_samples(cls, times, values) -> "WallSchedule":
        """Cubic-spline schedule through (t_k, L_k); Ldot is the spline derivative."""
        t = np.asarray(times, dtype=float)
        spline = interpolate.CubicSpline(t - t[0], np.asarray(values, dtype=float))
        deriv = spline.derivative()
        return cls(lambda s: float(spline(s)), lambda s: float(deriv(s)), float(t[-1] - t[0]), "spline")

    @property
    def closed(self) -> bool:
        return abs(self.L(self.tau) - self.L(0.0)) <= 1e-12 * self.L(0.0) and \
            abs(self.Ldot(self.tau) - self.Ldot(0.0)) <= 1e-12 * max(1.0, abs(self.Ldot(0.0)))

    def sample(self, times) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(times, dtype=float)
        return (np.array([self.L(s) for s in t], dtype=float),
                np.array([self.Ldot(s) for s in t], dtype=float))


@numba.njit(cache=True, nogil=True)
def _cayley_kernel(psi0, l_mid, c_mid, n2, e_scale, D, dt_over_hbar, stride):
    nsteps = l_mid.shape[0]
    n = psi0.shape[0]
    nsamples = nsteps // stride + 1
    if nsteps % stride != 0:
        nsamples += 1
    out = np.empty((nsamples, n), np.complex128)
    psi = psi0.copy()
    out[0] = psi
    k = 1
    a = np.empty((n, n), np.complex128)
    half = 0.5j * dt_over_hbar
    for s in range(nsteps):
        inv_l2 = 1.0 / (l_mid[s] * l_mid[s])
        for i in range(n):
            for j in range(n):
                a[i, j] = half * c_mid[s] * D[i, j]
            a[i, i] += half * e_scale * n2[i] * inv_l2
        b = psi - a @ psi
        for i in range(n):
            a[i, i] += 1.0
        psi = np.linalg.solve(a, b)
        if (s + 1) % stride == 0 or s == nsteps - 1:
            out[k] = psi
            k += 1
    return out


def _python_cayley(psi0, generator, nsteps, dt_over_hbar, stride):
    # fallback for user potentials; generator(s) is the step-midpoint matrix
    from scipy.linalg import lu_factor, lu_solve

    psi = psi0.copy()
    out = [psi.copy()]
    eye = np.eye(psi.size)
    for s in range(nsteps):
        a = 0.5j * dt_over_hbar * generator(s)
        psi = lu_solve(lu_factor(eye + a), psi - a @ psi)
        if (s + 1) % stride == 0 or s == nsteps - 1:
            out.append(psi.copy())
    return np.array(out)


@dataclass(frozen=True)
class PhaseSeries:
    """Phase bookkeeping of one level along an evolution."""

    level: int
    times: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    overlap: np.ndarray
    noncyclic: np.ndarray
    population: np.ndarray
    leak: float
    gamma_reference: np.ndarray
    records: tuple[PhaseRecord, ...] = field(repr=False, default=())

    @property
    def final(self) -> PhaseRecord:
        return self.records[-1]


@dataclass(frozen=True)
class EvolutionResult:
    """Sampled output of ``propagate``.

    ``states[k]`` holds the coefficients at ``times[k]``; ``phases`` maps each
    tracked level to its PhaseSeries.
    """

    times: np.ndarray
    states: np.ndarray
    norms: np.ndarray
    dt: float
    model: BoxModel
    schedule: WallSchedule
    initial: np.ndarray
    t_span: tuple[float, float]
    sample_stride: int
    phases: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("times", "states", "norms", "initial"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _operator_bound(model: BoxModel, lv: np.ndarray, rates: np.ndarray) -> float:
    e_top = model.energies(float(np.min(lv)))[-1]
    d_norm = float(np.linalg.norm(model.dilation, 2))
    bound = e_top + float(np.max(np.abs(rates))) * d_norm
    if model.potential is not None:
        bound += max(float(np.linalg.norm(model.potential(L, model.basis_size), 2)) for L in (lv.min(), lv.max()))
    return bound


def default_time_step(schedule: WallSchedule, model: BoxModel, t_span=None) -> float:
    """min(1e-3 hbar / E_1, 0.1 hbar / E_max) over the schedule."""
    t0, t1 = (0.0, schedule.tau) if t_span is None else t_span
    lv, ld = schedule.sample(np.linspace(t0, t1, 401))
    rates = np.array([model.evolution_rate(a, b) for a, b in zip(lv, ld)])
    hbar = model.config.hbar
    e1 = model.energies(float(np.max(lv)))[0]
    return min(DEFAULT_DT_FACTOR * hbar / e1, STABILITY_LIMIT * hbar / _operator_bound(model, lv, rates))


def _default_stride(dt, model, schedule, track, t_span):
    levels = tuple(track) or (1,)
    t0, t1 = t_span
    lv, _ = schedule.sample(np.linspace(t0, t1, 401))
    e = model.energies(float(np.min(lv)))[max(levels) - 1]
    return max(1, int(SAMPLE_PHASE_STEP * model.config.hbar / (e * abs(dt))))


def propagate(schedule: WallSchedule, initial, model: BoxModel | None = None, dt: float | None = None,
              sample_dt: float | None = None, track: Sequence[int] = (), t_span=None,
              leak_threshold: float = LEAK_THRESHOLD) -> EvolutionResult:
    """Integrate the coefficient equation with the midpoint Cayley step.

    Parameters
    ----------
    schedule : WallSchedule
    initial : array_like
        Normalized coefficient vector; its length fixes the basis size.
    model : BoxModel, optional
        Defaults to the transformed kind with ``len(initial)`` modes.
    dt : float, optional
        Step size; default min(1e-3 hbar/E_1, 0.1 hbar/E_max). Must satisfy
        dt E_max / hbar <= 0.1.
    sample_dt : float, optional
        Output spacing, rounded to a multiple of dt. By default chosen so the
        tracked levels advance by at most pi/4 in phase between samples.
    track : sequence of int
        Levels (1-based) whose phases are extracted into ``result.phases``.
    t_span : (t0, t1), optional
        Integration interval, default (0, tau). t1 < t0 runs backwards.

    Raises
    ------
    StabilityError
        If dt is too coarse for the largest eigenfrequency.
    IntegratorFault
        If the norm drifts by more than 1e-9 per unit time.
    """
    psi0 = np.asarray(initial, dtype=complex).copy()
    if model is None:
        model = BoxModel(ModelKind.TRANSFORMED, basis_size=psi0.size)
    if psi0.ndim != 1 or psi0.size != model.basis_size:
        raise PreconditionError(f"initial state must have {model.basis_size} coefficients")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise PreconditionError("initial state must be normalized")
    t0, t1 = (0.0, schedule.tau) if t_span is None else (float(t_span[0]), float(t_span[1]))
    span = t1 - t0
    if span == 0:
        raise PreconditionError("empty time span")
    hbar = model.config.hbar
    if dt is None:
        dt = default_time_step(schedule, model, (t0, t1))
    dt = abs(float(dt))
    nsteps = max(1, int(math.ceil(abs(span) / dt - 1e-9)))
    step = span / nsteps
    t_mid = t0 + (np.arange(nsteps) + 0.5) * step
    l_mid, ld_mid = schedule.sample(t_mid)
    c_mid = np.array([model.evolution_rate(a, b) for a, b in zip(l_mid, ld_mid)])
    bound = _operator_bound(model, l_mid, c_mid)
    if abs(step) * bound / hbar > STABILITY_LIMIT * (1 + 1e-9):
        raise StabilityError(
            f"dt*E_max/hbar = {abs(step) * bound / hbar:.3g} exceeds {STABILITY_LIMIT}; use dt <= {STABILITY_LIMIT * hbar / bound:.3g}"
        )
    if sample_dt is None:
        stride = _default_stride(step, model, schedule, track, (t0, t1))
    else:
        stride = max(1, int(round(abs(sample_dt) / abs(step))))
    stride = min(stride, nsteps)
    d = model.dilation
    if model.potential is None:
        n2 = np.arange(1, model.basis_size + 1, dtype=float) ** 2
        e_scale = hbar ** 2 * math.pi ** 2 / (2.0 * model.config.mass)
        states = _cayley_kernel(psi0, l_mid, c_mid, n2, e_scale, d, step / hbar, stride)
    else:
        def gen(s):
            L = l_mid[s]
            return np.diag(model.energies(L)) + c_mid[s] * d + model.potential(L, model.basis_size)
        states = _python_cayley(psi0, gen, nsteps, step / hbar, stride)
    idx = np.arange(0, nsteps + 1, stride)
    if idx[-1] != nsteps:
        idx = np.append(idx, nsteps)
    times = t0 + idx * step
    norms = np.linalg.norm(states, axis=1)
    drift = float(np.max(np.abs(norms - 1.0)))
    if drift > NORM_TOL_PER_TIME * max(1.0, abs(span)):
        raise IntegratorFault(f"norm drift {drift:.3e} exceeds {NORM_TOL_PER_TIME:g} per unit time")
    result = EvolutionResult(times, states, norms, step, model, schedule, psi0, (t0, t1), stride)
    for n in track:
        result.phases[n] = extract_phases(result, n=n, leak_threshold=leak_threshold)
    return result


def _cumulative_integral(t, values):
    # cubic-spline antiderivative: fourth order, so the dynamical phase does
    # not limit the geometric one at the sampling the unwrap guard allows
    if t.size < 4:
        return cumulative_trapezoid(t, values)
    anti = interpolate.CubicSpline(t, values).antiderivative()
    return anti(t) - anti(t[0])


def instantaneous_snapshots(model: BoxModel, schedule: WallSchedule, times) -> list[SpectrumSnapshot]:
    lv, ld = schedule.sample(times)
    return [model.spectrum(model.point_from_wall(a, b)) for a, b in zip(lv, ld)]


def extract_phases(result: EvolutionResult, schedule: WallSchedule | None = None, model: BoxModel | None = None,
                   n: int = 1, leak_threshold: float = LEAK_THRESHOLD, _retries: int = 4) -> PhaseSeries:
    """Split the phase of the tracked level into dynamical and geometric parts.

    alpha_n(t) = arg <n; R(t)|psi(t)>, unwrapped; delta_n = -(1/hbar) int E_n dt,
    integrated with a cubic spline through the sampled energies;
    gamma_n = alpha_n - delta_n. The reference ``gamma_reference`` is the
    open-path discrete Berry phase of the instantaneous eigenvectors on the
    same samples.

    Warns AdiabaticityWarning when the leaked population exceeds
    ``leak_threshold``; raises TrackingLostError below population 0.5.
    If two samples differ by more than pi/2 in alpha the evolution is re-run
    with denser sampling.
    """
    schedule = result.schedule if schedule is None else schedule
    model = result.model if model is None else model
    if not 1 <= n <= model.basis_size:
        raise PreconditionError(f"level {n} outside 1..{model.basis_size}")
    times = result.times
    snaps = instantaneous_snapshots(model, schedule, times)
    vecs = np.array([s.states[:, n - 1] for s in snaps])
    proj = np.einsum("ti,ti->t", vecs.conj(), result.states)
    pop = np.abs(proj) ** 2
    if np.min(pop) < TRACKING_FLOOR:
        k = int(np.argmin(pop))
        raise TrackingLostError(f"level {n} population {pop[k]:.3f} < {TRACKING_FLOOR} at t={times[k]:.4g}")
    leak = float(1.0 - np.min(pop / np.maximum(result.norms ** 2, 1e-300)))
    if leak > leak_threshold:
        warnings.warn(f"leaked population {leak:.2e} exceeds {leak_threshold:g}; phases are approximate",
                      AdiabaticityWarning, stacklevel=2)
    raw = np.angle(proj)
    jumps = np.abs(np.angle(np.exp(1j * np.diff(raw))))
    if jumps.size and np.max(jumps) >= UNWRAP_GUARD:
        if _retries <= 0 or result.sample_stride == 1:
            raise SamplingError("phase changes too fast between samples even at the finest stride")
        denser = propagate(schedule, result.initial, model, abs(result.dt),
                           sample_dt=max(1, result.sample_stride // 4) * abs(result.dt), t_span=result.t_span)
        return extract_phases(denser, schedule, model, n, leak_threshold, _retries - 1)
    alpha = raw[0] + np.concatenate(([0.0], np.cumsum(np.angle(np.exp(1j * np.diff(raw))))))
    energies = np.array([s.energies[n - 1] for s in snaps])
    hbar = model.config.hbar
    delta = -_cumulative_integral(times - times[0], energies) / hbar
    gamma = alpha - delta
    overlap_basis = model.basis_overlap if model.moving_basis else None
    ref = np.zeros(times.size)
    if times.size >= 2:
        links = []
        for a, b in zip(snaps[:-1], snaps[1:]):
            va, vb = a.states[:, n - 1], b.states[:, n - 1]
            if overlap_basis is not None:
                vb = overlap_basis(a.point, b.point) @ vb
            links.append(np.vdot(va, vb))
        ref[1:] = -np.cumsum(np.angle(links))
    v0 = snaps[0].states[:, n - 1]
    w = np.empty(times.size, dtype=complex)
    for k, s in enumerate(snaps):
        vk = s.states[:, n - 1]
        if overlap_basis is not None:
            vk = overlap_basis(snaps[0].point, s.point) @ vk
        w[k] = np.vdot(v0, vk)
    phi = w * np.exp(1j * gamma)
    records = tuple(PhaseRecord(n, float(delta[k]), float(gamma[k]), float(alpha[k]), complex(w[k]),
                                complex(phi[k]), float(times[k])) for k in range(times.size))
    return PhaseSeries(n, _frozen(times), _frozen(alpha), _frozen(delta), _frozen(gamma), _frozen(w), _frozen(phi),
                       _frozen(pop), leak, _frozen(ref), records)


def closed_path_reference(model: BoxModel, schedule: WallSchedule, n: int = 1, samples: int = 2001) -> float:
    """Discrete Berry phase of level n over one period of a closed schedule."""
    times = np.linspace(0.0, schedule.tau, samples)
    snaps = instantaneous_snapshots(model, schedule, times)
    return discrete_berry_phase(snaps, n, model.basis_overlap if model.moving_basis else None, closed=True)


def sine_synthesis(coeffs, length: float, grid) -> np.ndarray:
    """Sum_n c_n sqrt(2/length) sin(n pi x / length) on ``grid``."""
    c = np.asarray(coeffs, dtype=complex)
    x = np.asarray(grid, dtype=float)
    k = np.arange(1, c.size + 1)
    modes = math.sqrt(2.0 / length) * np.sin(np.outer(x, k) * np.pi / length)
    return modes @ c


def dilation_map(state, L: float, direction: str = "forward", config: PhysicalConfig = PhysicalConfig(),
                 grid=None, coefficients: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Unitary dilation between the reference domain [0, L0] and the box [0, L].

    Forward maps psi'(x) on [0, L0] to psi(y) = sqrt(L0/L) psi'(L0 y / L) on
    [0, L]; inverse undoes it. Samples are carried over point by point onto
    the rescaled grid, so no interpolation is involved.

    Parameters
    ----------
    state : array_like
        Samples on ``grid``, or sine coefficients when ``coefficients`` is true
        (then ``grid`` defaults to 4096 points on the source domain).
    L : float
        Current wall position.
    direction : {"forward", "inverse"}

    Returns
    -------
    grid_out, values_out : ndarray
    """
    if not L > 0:
        raise DomainError(f"L must be > 0, got {L}")
    if direction not in ("forward", "inverse"):
        raise PreconditionError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    scale = L / config.l0 if direction == "forward" else config.l0 / L
    source_len = config.l0 if direction == "forward" else L
    if coefficients:
        x = np.linspace(0.0, source_len, 4096) if grid is None else np.asarray(grid, dtype=float)
        values = sine_synthesis(state, source_len, x)
    else:
        if grid is None:
            raise PreconditionError("sampled states need their grid")
        x = np.asarray(grid, dtype=float)
        values = np.asarray(state)
    return x * scale, values / math.sqrt(scale)
