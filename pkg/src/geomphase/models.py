"""Particle in a box with a moving wall: spectra, couplings and eps rules.

Five Hamiltonian kinds are provided, all represented in a sine basis
phi_n(x) = sqrt(2/l) sin(n pi x / l):

================  ===========  =====================================  ===============
kind              basis        H                                      eps, h
================  ===========  =====================================  ===============
conventional      [0, L]       diag E(L) (+ optional potential)       no coupling
transformed       [0, L0]      diag E(L) - (R / (M L^2)) D            eps = R, R = M L Ldot
effective-plus    [0, L]       diag E(L) + R D                        eps = M L^2 R, R = Ldot / L
effective-minus   [0, L]       diag E(L) - R D                        eps = M L^2 R, R = Ldot / L
effective-mass    [0, L0]      diag E(L)                              no coupling
================  ===========  =====================================  ===============

Here E_n(L) = hbar^2 pi^2 n^2 / (2 M L^2) and D is the dilation generator
(xp + px)/2, whose matrix elements do not depend on the box length.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    OperatorMatrix,
    ParameterPoint,
    PhysicalConfig,
    SpectrumSnapshot,
    solve_spectrum,
)
from .errors import DomainError, NoCouplingError, PreconditionError
from . import rspt

DEFAULT_BASIS_SIZE = 64
MIN_BASIS_SIZE = 4


class ModelKind(str, enum.Enum):
    CONVENTIONAL = "conventional"
    TRANSFORMED = "transformed"
    EFFECTIVE_PLUS = "effective-plus"
    EFFECTIVE_MINUS = "effective-minus"
    EFFECTIVE_MASS = "effective-mass"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("_", "-"))
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise PreconditionError(f"unknown model kind {value!r}; expected one of {names}") from None

    @property
    def moving_basis(self) -> bool:
        return self in (ModelKind.CONVENTIONAL, ModelKind.EFFECTIVE_PLUS, ModelKind.EFFECTIVE_MINUS)

    @property
    def has_coupling(self) -> bool:
        return self in (ModelKind.TRANSFORMED, ModelKind.EFFECTIVE_PLUS, ModelKind.EFFECTIVE_MINUS)


def box_energy(n: int, L: float, config: PhysicalConfig = PhysicalConfig()) -> float:
    """hbar^2 pi^2 n^2 / (2 M L^2)."""
    if n < 1:
        raise PreconditionError(f"level must be >= 1, got {n}")
    if not L > 0:
        raise DomainError(f"L must be > 0, got {L}")
    return config.hbar ** 2 * math.pi ** 2 * n * n / (2.0 * config.mass * L * L)


def box_energies(size: int, L: float, config: PhysicalConfig = PhysicalConfig()) -> np.ndarray:
    if not L > 0:
        raise DomainError(f"L must be > 0, got {L}")
    n = np.arange(1, size + 1, dtype=float)
    return config.hbar ** 2 * np.pi ** 2 * n * n / (2.0 * config.mass * L * L)


def dilation_element(m: int, n: int, config: PhysicalConfig = PhysicalConfig(), L: float = 1.0) -> complex:
    """<m|(xp + px)/2|n> in the length-L sine basis.

    Equal to 2 i hbar (-1)^(m+n) m n / (m^2 - n^2) off the diagonal and zero
    on it, independent of ``L`` (the argument is accepted for symmetry with
    the other element formulas).
    """
    if m < 1 or n < 1:
        raise PreconditionError("basis indices start at 1")
    if m == n:
        return 0j
    sign = -1.0 if (m + n) % 2 else 1.0
    return 2j * config.hbar * sign * m * n / (m * m - n * n)


def dilation_matrix(size: int, config: PhysicalConfig = PhysicalConfig()) -> np.ndarray:
    k = np.arange(1, size + 1, dtype=float)
    m, n = np.meshgrid(k, k, indexing="ij")
    diff = m * m - n * n
    np.fill_diagonal(diff, 1.0)
    sign = np.where((m + n) % 2 == 1, -1.0, 1.0)
    d = 2j * config.hbar * sign * m * n / diff
    np.fill_diagonal(d, 0.0)
    return d


def cross_box_overlap(m: int, L1: float, n: int, L2: float) -> float:
    """Overlap of mode m of the [0, L1] box with mode n of the [0, L2] box.

    Uses the closed form of the sine-product integral over [0, min(L1, L2)];
    equal lengths return the exact Kronecker delta.
    """
    if m < 1 or n < 1:
        raise PreconditionError("basis indices start at 1")
    return float(cross_box_overlap_matrix(max(m, n), L1, L2)[m - 1, n - 1])


def cross_box_overlap_matrix(size: int, L1: float, L2: float) -> np.ndarray:
    """S[m-1, n-1] = integral of phi_m(x; L1) phi_n(x; L2) over the common support."""
    if not (L1 > 0 and L2 > 0):
        raise DomainError("box lengths must be > 0")
    if L1 == L2:
        return np.eye(size)
    k = np.arange(1, size + 1, dtype=float)
    a = k[:, None] * np.pi / L1
    b = k[None, :] * np.pi / L2
    ell = min(L1, L2)
    # sin(z)/z via np.sinc(z/pi), which is exact at z = 0
    return ell / math.sqrt(L1 * L2) * (np.sinc((a - b) * ell / np.pi) - np.sinc((a + b) * ell / np.pi))


def conventional_eigenfunction(n: int, L: float, grid) -> np.ndarray:
    """sqrt(2/L) sin(n pi x / L) on [0, L], zero outside."""
    if not L > 0:
        raise DomainError(f"L must be > 0, got {L}")
    x = np.asarray(grid, dtype=float)
    inside = (x >= 0) & (x <= L)
    return np.where(inside, math.sqrt(2.0 / L) * np.sin(n * np.pi * np.clip(x, 0, L) / L), 0.0)


PotentialFn = Callable[[float, int], np.ndarray]


@dataclass(frozen=True)
class BoxModel:
    """One Hamiltonian kind of the moving-wall problem in an N-mode sine basis.

    Parameters
    ----------
    kind : ModelKind or str
    config : PhysicalConfig
    basis_size : int
        Number of sine modes, at least 4.
    potential : callable, optional
        ``potential(L, N)`` returning the N x N Hermitian matrix of V in the
        instantaneous [0, L] sine basis. Only the conventional kind accepts it.

    Parameter points carry ``L`` and, for kinds with a coupling, ``R``; a
    missing ``R`` is read as 0.
    """

    kind: ModelKind
    config: PhysicalConfig = PhysicalConfig()
    basis_size: int = DEFAULT_BASIS_SIZE
    potential: PotentialFn | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if int(self.basis_size) != self.basis_size or self.basis_size < MIN_BASIS_SIZE:
            raise PreconditionError(f"basis_size must be an integer >= {MIN_BASIS_SIZE}")
        object.__setattr__(self, "basis_size", int(self.basis_size))
        if self.potential is not None and self.kind is not ModelKind.CONVENTIONAL:
            raise PreconditionError("a potential hook is only supported for the conventional kind")

    @property
    def moving_basis(self) -> bool:
        return self.kind.moving_basis

    @property
    def dilation(self) -> np.ndarray:
        return dilation_matrix(self.basis_size, self.config)

    def energies(self, L: float) -> np.ndarray:
        return box_energies(self.basis_size, L, self.config)

    def unperturbed(self, point: ParameterPoint) -> OperatorMatrix:
        return OperatorMatrix(np.diag(self.energies(point["L"])).astype(complex))

    def coupling_matrix(self, L: float) -> OperatorMatrix:
        """The perturbation h of the splitting H = H0 + eps h."""
        if not self.kind.has_coupling:
            raise NoCouplingError(f"the {self.kind.value} kind has no perturbative coupling")
        if not L > 0:
            raise DomainError(f"L must be > 0, got {L}")
        sign = 1.0 if self.kind is ModelKind.EFFECTIVE_PLUS else -1.0
        return OperatorMatrix(sign * self.dilation / (self.config.mass * L * L))

    def eps(self, point: ParameterPoint) -> float:
        """Expansion parameter at ``point``."""
        if not self.kind.has_coupling:
            raise NoCouplingError(f"the {self.kind.value} kind has no perturbative coupling")
        r = point.get("R", 0.0)
        if self.kind is ModelKind.TRANSFORMED:
            return r
        L = point["L"]
        return self.config.mass * L * L * r

    def point_from_wall(self, L: float, Ldot: float) -> ParameterPoint:
        """Parameter point for wall position ``L`` moving at ``Ldot``."""
        if self.kind is ModelKind.TRANSFORMED:
            return ParameterPoint.of(L=L, R=self.config.mass * L * Ldot)
        return ParameterPoint.of(L=L, R=Ldot / L)

    def hamiltonian(self, point: ParameterPoint) -> OperatorMatrix:
        L = point["L"]
        h = np.diag(self.energies(L)).astype(complex)
        if self.kind.has_coupling:
            h = h + self.eps(point) * self.coupling_matrix(L).entries
        elif self.potential is not None:
            h = h + OperatorMatrix(self.potential(L, self.basis_size)).entries
        return OperatorMatrix(h)

    def spectrum(self, point: ParameterPoint) -> SpectrumSnapshot:
        """Gauge-fixed eigen-decomposition; columns are real-positive on their basis mode."""
        return solve_spectrum(self.hamiltonian(point), point)

    def base_spectrum(self, point: ParameterPoint) -> SpectrumSnapshot:
        n = self.basis_size
        return SpectrumSnapshot(self.energies(point["L"]), np.eye(n, dtype=complex), point)

    def expansion(self, point: ParameterPoint, order: int) -> rspt.PerturbationExpansion:
        return rspt.expand(self.base_spectrum(point), self.coupling_matrix(point["L"]), order)

    def basis_overlap(self, p: ParameterPoint, q: ParameterPoint) -> np.ndarray:
        """<m; p | n; q> for the basis functions at two parameter points."""
        if self.moving_basis:
            return cross_box_overlap_matrix(self.basis_size, p["L"], q["L"])
        return np.eye(self.basis_size)

    def analytic_connection(self, point: ParameterPoint, direction: str) -> np.ndarray:
        """i <m|d_a|n> of the unperturbed basis along ``direction``.

        For a moving basis this is D / (hbar L) per unit dL; a fixed basis
        and the R direction give zero.
        """
        n = self.basis_size
        if direction not in point.names and direction not in ("L", "R"):
            raise PreconditionError(f"unknown direction {direction!r}")
        if self.moving_basis and direction == "L":
            return self.dilation / (self.config.hbar * point["L"])
        return np.zeros((n, n), dtype=complex)

    def evolution_rate(self, L: float, Ldot: float) -> float:
        """Coefficient c in the coefficient-space generator diag E(L) + c D.

        Coefficients refer to the fixed [0, L0] basis for fixed-basis kinds and
        to the instantaneous [0, L] basis otherwise; the two coincide under the
        dilation map. Moving-basis kinds pick up -Ldot/L D from the basis motion.
        """
        r = Ldot / L
        return {
            ModelKind.CONVENTIONAL: -r,
            ModelKind.TRANSFORMED: -r,
            ModelKind.EFFECTIVE_PLUS: 0.0,
            ModelKind.EFFECTIVE_MINUS: -2.0 * r,
            ModelKind.EFFECTIVE_MASS: 0.0,
        }[self.kind]

    def with_basis_size(self, size: int) -> "BoxModel":
        return BoxModel(self.kind, self.config, size, self.potential)
