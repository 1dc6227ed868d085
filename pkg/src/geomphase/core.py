"""Shared value types, gauge fixing and the measure-weighted inner product."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConsistencyError,
    DegeneracyError,
    DomainError,
    HermiticityError,
    NumericError,
    PreconditionError,
)

HERMITIAN_RTOL = 1e-12
ORTHONORMAL_TOL = 1e-10
EIGEN_RESIDUAL_RTOL = 1e-9
DEFAULT_GAP_TOL = 1e-8
DEFAULT_GRID_POINTS = 4096


def _frozen(a, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PhysicalConfig:
    """Unit constants shared by every model: hbar, mass and the reference wall L0."""

    hbar: float = 1.0
    mass: float = 1.0
    l0: float = 1.0

    def __post_init__(self):
        for name in ("hbar", "mass", "l0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise PreconditionError(f"PhysicalConfig.{name} must be finite and > 0, got {v!r}")


@dataclass(frozen=True)
class ParameterPoint:
    """Ordered named real coordinates, e.g. ``ParameterPoint.of(L=1.0, R=0.0)``."""

    coords: tuple[tuple[str, float], ...]

    def __post_init__(self):
        names = [c[0] for c in self.coords]
        if len(set(names)) != len(names):
            raise PreconditionError(f"duplicate coordinate names in {names}")
        clean = tuple((str(k), float(v)) for k, v in self.coords)
        for k, v in clean:
            if not math.isfinite(v):
                raise PreconditionError(f"coordinate {k} is not finite")
            if k == "L" and v <= 0:
                raise DomainError(f"wall separation L must be > 0, got {v}")
        object.__setattr__(self, "coords", clean)

    @classmethod
    def of(cls, **coords: float) -> "ParameterPoint":
        return cls(tuple(coords.items()))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float]) -> "ParameterPoint":
        return cls(tuple(mapping.items()))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.coords)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.coords])

    def __getitem__(self, name: str) -> float:
        for k, v in self.coords:
            if k == name:
                return v
        raise KeyError(name)

    def get(self, name: str, default: float = 0.0) -> float:
        try:
            return self[name]
        except KeyError:
            return default

    def as_dict(self) -> dict[str, float]:
        return dict(self.coords)

    def shifted(self, name: str, delta: float) -> "ParameterPoint":
        if name not in self.names:
            raise KeyError(name)
        return ParameterPoint(tuple((k, v + delta if k == name else v) for k, v in self.coords))

    def isclose(self, other: "ParameterPoint", tol: float = 1e-12) -> bool:
        if self.names != other.names:
            return False
        a, b = self.values, other.values
        return bool(np.all(np.abs(a - b) <= tol * np.maximum(1.0, np.abs(a))))


@dataclass(frozen=True)
class ParameterPath:
    """Time-stamped parameter points. ``closed`` paths end where they start."""

    samples: tuple[tuple[float, ParameterPoint], ...]
    closed: bool = False

    def __post_init__(self):
        samples = tuple((float(t), p) for t, p in self.samples)
        object.__setattr__(self, "samples", samples)
        times = np.array([t for t, _ in samples])
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise PreconditionError("path times must be strictly increasing")
        if self.closed and samples and not samples[0][1].isclose(samples[-1][1], 1e-9):
            raise PreconditionError("closed path must end at its starting point")

    @classmethod
    def from_points(cls, points: Sequence[ParameterPoint], closed: bool | None = None) -> "ParameterPath":
        n = len(points)
        times = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(n)
        if closed is None:
            closed = n > 2 and points[0].isclose(points[-1], 1e-9)
        return cls(tuple(zip(times, points)), closed)

    @classmethod
    def rectangle(cls, l_range: tuple[float, float], r_range: tuple[float, float],
                  points_per_edge: int = 40) -> "ParameterPath":
        """Counterclockwise rectangle in the (L, R) plane, starting at (l_min, r_min)."""
        (la, lb), (ra, rb) = l_range, r_range
        s = np.linspace(0.0, 1.0, points_per_edge, endpoint=False)
        corners = [((la, ra), (lb, ra)), ((lb, ra), (lb, rb)), ((lb, rb), (la, rb)), ((la, rb), (la, ra))]
        pts = []
        for (l1, r1), (l2, r2) in corners:
            for u in s:
                pts.append(ParameterPoint.of(L=l1 + (l2 - l1) * u, R=r1 + (r2 - r1) * u))
        pts.append(pts[0])
        return cls.from_points(pts, closed=True)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])

    @property
    def points(self) -> list[ParameterPoint]:
        return [p for _, p in self.samples]

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class OperatorMatrix:
    """An operator in a truncated orthonormal basis of dimension ``dim``."""

    entries: np.ndarray
    hermitian: bool = True

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise PreconditionError(f"operator must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericError("operator has non-finite entries")
        if self.hermitian:
            scale = np.max(np.abs(a)) if a.size else 0.0
            defect = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
            if defect > HERMITIAN_RTOL * scale:
                raise HermiticityError(f"operator not Hermitian: max|H - H^dag| = {defect:.3e}")
        object.__setattr__(self, "entries", _frozen(a))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.entries + other.entries, self.hermitian and other.hermitian)

    def scaled(self, c: float) -> "OperatorMatrix":
        return OperatorMatrix(c * self.entries, self.hermitian and np.isreal(c))

    def in_basis(self, states: np.ndarray) -> "OperatorMatrix":
        """Matrix elements <a|O|b> for the columns of ``states``."""
        v = np.asarray(states)
        return OperatorMatrix(v.conj().T @ self.entries @ v, self.hermitian)


def fix_gauge(states: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """Rephase each column so its overlap with the matching reference column is real, >= 0.

    ``reference`` defaults to the identity, i.e. the unperturbed basis vectors.
    Columns orthogonal to their reference are left untouched.
    """
    v = np.asarray(states, dtype=complex)
    if reference is None:
        ov = np.diagonal(v).copy()
    else:
        ov = np.einsum("ij,ij->j", np.asarray(reference).conj(), v)
    mag = np.abs(ov)
    phase = np.where(mag > 0, ov.conj() / np.where(mag > 0, mag, 1.0), 1.0)
    return v * phase[None, :]


def check_gaps(energies: np.ndarray, gap_tol: float = DEFAULT_GAP_TOL) -> None:
    e = np.asarray(energies)
    if e.size < 2:
        return
    span = e[-1] - e[0]
    gaps = np.diff(e)
    k = int(np.argmin(gaps))
    if gaps[k] < gap_tol * span:
        raise DegeneracyError(
            f"levels {k + 1} and {k + 2} are degenerate (gap {gaps[k]:.3e} < {gap_tol:g} x span)",
            levels=(k + 1, k + 2),
        )


@dataclass(frozen=True)
class SpectrumSnapshot:
    """Eigen-decomposition of a Hamiltonian at one parameter point.

    ``states[:, n]`` is the eigenvector of level ``n + 1`` (levels are 1-based
    throughout the package, columns 0-based).
    """

    energies: np.ndarray
    states: np.ndarray
    point: ParameterPoint | None = None
    reference: np.ndarray | None = None
    gap_tol: float = DEFAULT_GAP_TOL

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        v = np.asarray(self.states, dtype=complex)
        if v.ndim != 2 or v.shape[1] != e.size:
            raise PreconditionError("states must have one column per energy")
        if np.any(np.diff(e) < 0):
            raise PreconditionError("energies must be ascending")
        check_gaps(e, self.gap_tol)
        gram = v.conj().T @ v
        if np.max(np.abs(gram - np.eye(e.size))) > ORTHONORMAL_TOL:
            raise NumericError("snapshot columns are not orthonormal")
        ref = self.reference
        ov = np.diagonal(v) if ref is None else np.einsum("ij,ij->j", np.asarray(ref).conj(), v)
        if np.any(np.abs(ov.imag) > 1e-12 * np.maximum(1.0, np.abs(ov))) or np.any(ov.real < -1e-12):
            raise PreconditionError("snapshot is not in the real-positive-overlap gauge; use fix_gauge")
        object.__setattr__(self, "energies", _frozen(e))
        object.__setattr__(self, "states", _frozen(v))
        if ref is not None:
            object.__setattr__(self, "reference", _frozen(ref, complex))

    @property
    def dim(self) -> int:
        return self.energies.size

    def state(self, n: int) -> np.ndarray:
        return self.states[:, n - 1]

    def rephased(self, phases: np.ndarray) -> "_RawSnapshot":
        """Copy with column k multiplied by ``phases[k]``; leaves the gauge convention."""
        return _RawSnapshot(self.energies, self.states * np.asarray(phases)[None, :], self.point)


@dataclass(frozen=True)
class _RawSnapshot:
    # Same interface as SpectrumSnapshot without the gauge invariant; used for gauge tests.
    energies: np.ndarray
    states: np.ndarray
    point: ParameterPoint | None = None

    def state(self, n: int) -> np.ndarray:
        return self.states[:, n - 1]


def solve_spectrum(hamiltonian: OperatorMatrix | np.ndarray, point: ParameterPoint | None = None,
                   reference: np.ndarray | None = None, gap_tol: float = DEFAULT_GAP_TOL) -> SpectrumSnapshot:
    """Dense Hermitian eigensolve followed by gauge fixing against ``reference``."""
    h = hamiltonian.entries if isinstance(hamiltonian, OperatorMatrix) else np.asarray(hamiltonian, complex)
    w, v = np.linalg.eigh(h)
    v = fix_gauge(v, reference)
    hnorm = np.linalg.norm(h, 2)
    res = np.linalg.norm(h @ v - v * w[None, :], axis=0)
    if np.any(res > EIGEN_RESIDUAL_RTOL * max(hnorm, np.finfo(float).tiny)):
        raise NumericError(f"eigen residual {res.max():.3e} exceeds tolerance")
    return SpectrumSnapshot(w, v, point, reference, gap_tol)


@dataclass(frozen=True)
class MeasureWeight:
    """Indicator of the box [0, L]: mu(x) = theta(x) - theta(x - L)."""

    wall: float

    def __post_init__(self):
        if not (math.isfinite(self.wall) and self.wall > 0):
            raise DomainError(f"wall position must be > 0, got {self.wall}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return ((x >= 0) & (x < self.wall)).astype(float)


def _support_integral(x: np.ndarray, y: np.ndarray, a: float, b: float) -> complex:
    # trapezoid of samples y(x) restricted to [a, b]; partial end cells use linear interpolation
    inside = (x > a) & (x < b)
    xs = np.concatenate(([a], x[inside], [b]))
    ya = np.interp(a, x, y.real) + 1j * np.interp(a, x, y.imag)
    yb = np.interp(b, x, y.real) + 1j * np.interp(b, x, y.imag)
    ys = np.concatenate(([ya], y[inside], [yb]))
    return complex(np.trapezoid(ys, xs))


def measure_inner_product(x, f, g, mu: MeasureWeight) -> complex:
    """Integral of conj(f) g mu dx over the support [0, L] by composite trapezoid.

    ``x`` must be a uniform grid with x[0] <= 0 and x[-1] >= L.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f)
    g = np.asarray(g)
    if x.ndim != 1 or f.shape != x.shape or g.shape != x.shape:
        raise PreconditionError("f and g must be sampled on the grid x")
    tol = 1e-12 * max(1.0, mu.wall)
    if x[0] > tol or x[-1] < mu.wall - tol:
        raise DomainError(f"grid [{x[0]}, {x[-1]}] does not cover the support [0, {mu.wall}]")
    h = np.diff(x)
    if np.max(np.abs(h - h[0])) > 1e-9 * abs(h[0]):
        raise PreconditionError("grid must be uniform")
    return _support_integral(x, np.conj(f) * g, 0.0, mu.wall)


def box_grid(wall: float, points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, wall, points)


@dataclass(frozen=True)
class PhaseRecord:
    """Phase bookkeeping of one level at one instant.

    total = dynamical + geometric, and noncyclic_phase = overlap * exp(i geometric).
    Angles are unwrapped (accumulated), never reduced mod 2 pi.
    """

    level: int
    dynamical: float
    geometric: float
    total: float
    overlap: complex
    noncyclic_phase: complex
    time: float = 0.0
    tol: float = field(default=1e-12, repr=False, compare=False)

    def __post_init__(self):
        for name in ("dynamical", "geometric", "total"):
            if not math.isfinite(getattr(self, name)):
                raise NumericError(f"{name} phase is not finite")
        scale = max(1.0, abs(self.total), abs(self.dynamical))
        if abs(self.total - (self.dynamical + self.geometric)) > self.tol * scale:
            raise ConsistencyError(
                f"alpha - (delta + gamma) = {self.total - self.dynamical - self.geometric:.3e}"
            )
        if abs(abs(self.noncyclic_phase) - abs(self.overlap)) > self.tol:
            raise ConsistencyError("|Phi| differs from |W|")


def cumulative_trapezoid(times, values) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size == 0:
        return np.zeros(0)
    steps = 0.5 * (v[1:] + v[:-1]) * np.diff(t)
    return np.concatenate(([0.0], np.cumsum(steps)))


def assemble_phase_record(level: int, alpha: float, times: Iterable[float], energies: Iterable[float],
                          gamma: float, w: complex, config: PhysicalConfig = PhysicalConfig(),
                          tol: float = 1e-12) -> PhaseRecord:
    """Build a PhaseRecord from the total phase and the energies sampled along the path.

    The dynamical phase is -(1/hbar) * trapezoid(E dt); ``alpha`` must equal
    delta + gamma or ConsistencyError is raised.
    """
    t = np.asarray(list(times), dtype=float)
    e = np.asarray(list(energies), dtype=float)
    if t.shape != e.shape:
        raise PreconditionError("times and energies must have equal length")
    if not np.all(np.isfinite(e)):
        raise NumericError("energies along path are not finite")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise PreconditionError("times must be increasing")
    delta = -float(np.trapezoid(e, t)) / config.hbar if t.size > 1 else 0.0
    phi = complex(w) * np.exp(1j * gamma)
    return PhaseRecord(level, delta, float(gamma), float(alpha), complex(w), phi,
                       float(t[-1]) if t.size else 0.0, tol)
