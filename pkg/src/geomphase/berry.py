"""Berry connections and phases.

Two independent routes are provided:

* a perturbative one, assembling the connection order by order from the
  series coefficients C^l_mn, their parameter derivatives and the connection
  table A0_mn = i <m|d|n>_0 of the unperturbed basis;
* a gauge-invariant numerical one, the discrete Berry phase built from
  overlaps of eigenvectors sampled along a path.

Sign convention: A_n = i <n|d|n>, gamma_n = integral of A_n, so that the
discrete phase is -arg of the product of successive overlaps.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import integrate, interpolate

from .core import ParameterPath, ParameterPoint, _frozen
from .errors import (
    AccuracyWarning,
    DomainError,
    GeometryError,
    PathTooCoarseError,
    PreconditionError,
    UnsupportedOrderError,
)
from .rspt import PerturbationExpansion

MAX_CONNECTION_ORDER = 3
OVERLAP_GUARD = 0.5
RICHARDSON_WARN = 0.01
# S_1 = sum_{m>1} m^2 / (m^2 - 1)^3, converged by partial sums with an integral tail bound
S1_GOLDEN = 0.1743667583560283


def default_step(point: ParameterPoint, direction: str) -> float:
    return 1e-4 * max(abs(point[direction]), 1.0)


class VectorBasisFamily:
    """A parametric orthonormal basis given as explicit column vectors.

    Parameters
    ----------
    vectors : callable
        ``vectors(point)`` returns an N x N matrix whose columns are the basis
        vectors at ``point``, in a fixed ambient basis and in a smooth gauge.
    """

    def __init__(self, vectors: Callable[[ParameterPoint], np.ndarray]):
        self.vectors = vectors

    def basis_overlap(self, p: ParameterPoint, q: ParameterPoint) -> np.ndarray:
        return np.asarray(self.vectors(p)).conj().T @ np.asarray(self.vectors(q))


def _overlap_fn(family):
    if callable(getattr(family, "basis_overlap", None)):
        return family.basis_overlap
    if callable(family):
        return family
    raise PreconditionError("basis family must provide basis_overlap(p, q)")


def _central(overlap, point, direction, h):
    try:
        plus = np.asarray(overlap(point, point.shifted(direction, h)))
        minus = np.asarray(overlap(point, point.shifted(direction, -h)))
    except KeyError as exc:
        raise GeometryError(f"direction {direction!r} is not a coordinate of the point") from exc
    return 1j * (plus - minus) / (2.0 * h)


def connection_zeroth(basis_family, point: ParameterPoint, direction: str, step: float | None = None,
                      rule: str = "auto") -> np.ndarray:
    """Zeroth-order connection table A0_mn = i <m|d_a|n>_0.

    Parameters
    ----------
    basis_family : object
        Anything with ``basis_overlap(p, q)`` returning <m; p|n; q>. Models
        that also provide ``analytic_connection(point, direction)`` use that
        rule when ``rule`` is ``"auto"`` or ``"analytic"``.
    step : float, optional
        Central-difference step; default 1e-4 times the coordinate scale.
    rule : {"auto", "analytic", "numeric"}

    Notes
    -----
    The numeric route combines central differences at ``step`` and
    ``step/2`` by Richardson extrapolation. An AccuracyWarning is emitted
    when the two differ by more than 1 % of the table's scale.
    """
    if rule not in ("auto", "analytic", "numeric"):
        raise PreconditionError(f"unknown rule {rule!r}")
    analytic = getattr(basis_family, "analytic_connection", None)
    if rule == "analytic" and analytic is None:
        raise PreconditionError("basis family has no analytic connection rule")
    if rule != "numeric" and analytic is not None:
        return np.asarray(analytic(point, direction))
    overlap = _overlap_fn(basis_family)
    h = default_step(point, direction) if step is None else float(step)
    a_h = _central(overlap, point, direction, h)
    a_h2 = _central(overlap, point, direction, h / 2)
    scale = float(np.max(np.abs(a_h2)))
    if scale > 0 and np.max(np.abs(a_h - a_h2)) > RICHARDSON_WARN * scale:
        warnings.warn(f"connection step {h:g} too large along {direction}", AccuracyWarning, stacklevel=2)
    return (4.0 * a_h2 - a_h) / 3.0


@dataclass(frozen=True)
class ConnectionSample:
    """Connection one-form coefficients at one point.

    ``diagonal[n, a]`` is A_{n+1, a}; ``offdiagonal`` optionally maps a
    direction name to the complex table A0_mn.
    """

    point: ParameterPoint
    directions: tuple[str, ...]
    diagonal: np.ndarray
    offdiagonal: Mapping[str, np.ndarray] | None = None

    def __post_init__(self):
        d = np.asarray(self.diagonal, dtype=float)
        if d.ndim != 2 or d.shape[1] != len(self.directions):
            raise PreconditionError("diagonal must have one column per direction")
        if not np.all(np.isfinite(d)):
            raise PreconditionError("connection coefficients are not finite")
        object.__setattr__(self, "diagonal", _frozen(d))

    def level(self, n: int) -> np.ndarray:
        return self.diagonal[n - 1]


@dataclass(frozen=True)
class ConnectionSeries:
    """Order-by-order connection at one point.

    Attributes
    ----------
    contributions : ndarray, shape (K+1, N, d)
        Real part of the eps^j term (eps included) for each level and
        direction. Order 0 is the diagonal of A0.
    imag_residual : ndarray, shape (K+1, N, d)
        Imaginary parts discarded from ``contributions``; a diagnostic that
        should vanish to rounding.
    f : ndarray, shape (N,)
        Exact-form potential at the point; its differential i df is kept out
        of ``contributions`` so loop integrals can drop it.
    """

    point: ParameterPoint
    directions: tuple[str, ...]
    eps: float
    contributions: np.ndarray
    imag_residual: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        for name in ("contributions", "imag_residual"):
            object.__setattr__(self, name, _frozen(getattr(self, name), float))
        object.__setattr__(self, "f", _frozen(self.f, complex))

    @property
    def order(self) -> int:
        return self.contributions.shape[0] - 1

    def total(self, order: int | None = None) -> np.ndarray:
        """Sum of contributions through ``order``, shape (N, d), exact form excluded."""
        k = self.order if order is None else order
        return self.contributions[: k + 1].sum(axis=0)

    def sample(self, order: int | None = None) -> ConnectionSample:
        return ConnectionSample(self.point, self.directions, self.total(order))


def _as_table_fn(a0):
    if callable(a0):
        return a0
    if isinstance(a0, Mapping):
        return lambda point, direction: a0[direction]
    raise PreconditionError("a0 must be a callable (point, direction) or a mapping direction -> table")


def _expansion_fn(family, order):
    if callable(getattr(family, "expansion", None)):
        return lambda p: family.expansion(p, order)
    if callable(family):
        return family
    raise PreconditionError("expansion family must be callable or provide expansion(point, order)")


def exact_form_potential(exp: PerturbationExpansion, eps: float, order: int | None = None) -> np.ndarray:
    """f_n = sum_j sum_{l=1}^{j} sum_m (l/j) conj(C^{j-l}_mn) C^l_mn eps^j for every level.

    Orders 1 and 2 vanish identically by normalization; f is purely
    imaginary, so i df is real.
    """
    K = exp.order if order is None else order
    c = exp.vector_coeffs
    f = np.zeros(exp.dim, dtype=complex)
    for j in range(1, K + 1):
        fj = np.zeros(exp.dim, dtype=complex)
        for l in range(1, j + 1):
            fj += (l / j) * np.einsum("mn,mn->n", c[j - l].conj(), c[l])
        f += fj * eps ** j
    return f


def _order_terms(c, dc, a0, K):
    """Connection terms of orders 0..K (eps stripped) for one direction.

    c[l] is C^l, dc[l] its derivative along the direction, a0 the A0 table.
    """
    n = a0.shape[0]
    d0 = np.diagonal(a0)
    off = a0 - np.diag(d0)
    diffs = d0[:, None] - d0[None, :]  # [m, n] -> A0_m - A0_n
    mask = 1.0 - np.eye(n)
    terms = [d0.astype(complex)]
    if K >= 1:
        # 2 sum_{r != n} Re(C1_rn A0_nr)
        terms.append(2.0 * np.real(np.einsum("rn,nr->n", c[1] * mask, a0)) + 0j)
    if K >= 2:
        c1, c2, dc1 = c[1], c[2], dc[1]
        t = np.einsum("mn,mn->n", np.abs(c1) ** 2 * mask, diffs)
        t = t + 0.5j * np.einsum("mn->n", (c1.conj() * dc1 - dc1.conj() * c1) * mask)
        t = t + 2.0 * np.real(np.einsum("mn,nm->n", c2 * mask, a0))
        t = t + np.einsum("rn,rm,mn->n", c1.conj(), off, c1)
        terms.append(t)
    if K >= 3:
        j = 3
        t = np.zeros(n, dtype=complex)
        for l in range(1, j):
            t = t + np.einsum("mn,mn->n", c[j - l].conj() * c[l] * mask, diffs)
            # (i l / j) [conj(C^l) dC^{j-l} - conj(dC^{j-l}) C^l]
            t = t + (1j * l / j) * np.einsum("mn->n", c[l].conj() * dc[j - l] - dc[j - l].conj() * c[l])
            t = t + np.einsum("rn,rm,mn->n", c[j - l].conj(), off, c[l])
        # l = 0 and l = j members of the A0_rm sum, the analogue of 2 Re(C2_mn A0_nm)
        t = t + 2.0 * np.real(np.einsum("mn,nm->n", c[j] * mask, a0))
        terms.append(t)
    return terms


def connection_perturbative(expansion_family, a0, eps_rule: Callable[[ParameterPoint], float],
                            point: ParameterPoint, order: int = 2,
                            directions: Sequence[str] | None = None,
                            step: float | None = None) -> ConnectionSeries:
    """Assemble the connection one-form of every level through ``order`` (at most 3).

    Parameters
    ----------
    expansion_family : callable or model
        ``expansion_family(point)`` returns a PerturbationExpansion of order
        >= ``order`` whose unperturbed basis varies smoothly in the gauge
        used for ``a0``. Objects providing ``expansion(point, order)`` are
        accepted too.
    a0 : callable or mapping
        ``a0(point, direction)`` or ``{direction: table}`` with the
        zeroth-order table A0_mn at ``point``.
    eps_rule : callable
        Expansion parameter as a function of the point.
    directions : sequence of str, optional
        Defaults to every coordinate of ``point``.
    step : float, optional
        Central-difference step for dC^l; default 1e-4 times coordinate scale.
        The derivative is Richardson-extrapolated from ``step`` and ``step/2``.

    Notes
    -----
    The order-3 term is assembled from the general order-j expression
    reduced with the normalization identities. Two details matter: the
    derivative piece is (i l / j) [conj(C^l) dC^{j-l} - conj(dC^{j-l}) C^l]
    after re-indexing, and the l = 0 and l = j members of the A0_rm sum
    survive as 2 sum_{m != n} Re(C^j_mn A0_nm).
    """
    if order > MAX_CONNECTION_ORDER or order < 0:
        raise UnsupportedOrderError(f"connection order must be in 0..{MAX_CONNECTION_ORDER}, got {order}")
    dirs = tuple(point.names if directions is None else directions)
    for a in dirs:
        if a not in point.names:
            raise GeometryError(f"direction {a!r} is not a coordinate of {point.names}")
    family = _expansion_fn(expansion_family, order)
    table = _as_table_fn(a0)
    exp = family(point)
    if exp.order < order:
        raise PreconditionError(f"expansion has order {exp.order} < {order}")
    c = np.asarray(exp.vector_coeffs[: order + 1])
    eps = float(eps_rule(point))

    def coeffs_at(p):
        try:
            e = family(p)
        except (KeyError, PreconditionError) as exc:
            raise GeometryError(f"expansion unavailable on the stencil point {p.as_dict()}: {exc}") from exc
        return np.asarray(e.vector_coeffs[: order + 1])

    n = exp.dim
    contributions = np.zeros((order + 1, n, len(dirs)))
    residual = np.zeros_like(contributions)
    for k, a in enumerate(dirs):
        h = default_step(point, a) if step is None else float(step)
        if order >= 2:
            d_h = (coeffs_at(point.shifted(a, h)) - coeffs_at(point.shifted(a, -h))) / (2 * h)
            d_h2 = (coeffs_at(point.shifted(a, h / 2)) - coeffs_at(point.shifted(a, -h / 2))) / h
            dc = (4.0 * d_h2 - d_h) / 3.0
        else:
            dc = np.zeros_like(c)
        terms = _order_terms(c, dc, np.asarray(table(point, a), dtype=complex), order)
        for j, t in enumerate(terms):
            contributions[j, :, k] = t.real * eps ** j
            residual[j, :, k] = t.imag * eps ** j
    f = exact_form_potential(exp, eps, order)
    return ConnectionSeries(point, dirs, eps, contributions, residual, f)


def loop_integral(path: ParameterPath, values, directions: Sequence[str] | None = None) -> float:
    """Line integral of a one-form sampled at the path points, by the trapezoid rule.

    ``values[k, a]`` is the coefficient along ``directions[a]`` at
    ``path.points[k]``.
    """
    pts = path.points
    dirs = tuple(pts[0].names if directions is None else directions)
    v = np.asarray(values, dtype=float)
    if v.shape != (len(pts), len(dirs)):
        raise PreconditionError(f"values must have shape ({len(pts)}, {len(dirs)})")
    x = np.array([[p[a] for a in dirs] for p in pts])
    dx = np.diff(x, axis=0)
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * dx))


def leading_sum_term(m: int, n: int) -> float:
    """m^2 n^2 / (m^2 - n^2)^3."""
    return m * m * n * n / float(m * m - n * n) ** 3


def leading_connection_sum(n: int, cutoff: int) -> tuple[float, float]:
    """Partial sum of m^2 n^2 / (m^2 - n^2)^3 over m != n, m <= cutoff, and a tail bound.

    The bound is the integral of the (positive, decreasing) summand from
    ``cutoff`` to infinity, which dominates the omitted terms.
    """
    if n < 1:
        raise PreconditionError("level must be >= 1")
    if cutoff < n + 1:
        raise PreconditionError(f"cutoff must be >= n + 1 = {n + 1}")
    m = np.arange(1, cutoff + 1, dtype=float)
    m = m[m != n]
    terms = m * m * n * n / (m * m - n * n) ** 3
    # ascending magnitude for a stable reduction: add the tail first
    total = math.fsum(terms[::-1])
    tail, _ = integrate.quad(lambda x: x * x * n * n / (x * x - n * n) ** 3, cutoff, np.inf)
    return total, tail


def _link_overlaps(snapshots, n, basis_overlap, closed):
    k = n - 1
    states = [np.asarray(s.states)[:, k] for s in snapshots]
    points = [getattr(s, "point", None) for s in snapshots]
    seq = list(range(len(states)))
    if closed:
        seq = seq[:-1] + [0]
    links = []
    for i, j in zip(seq[:-1], seq[1:]):
        if basis_overlap is None:
            links.append(np.vdot(states[i], states[j]))
        else:
            links.append(np.vdot(states[i], np.asarray(basis_overlap(points[i], points[j])) @ states[j]))
    links = np.array(links)
    bad = np.nonzero(np.abs(links) <= OVERLAP_GUARD)[0]
    if bad.size:
        raise PathTooCoarseError(
            f"overlap {abs(links[bad[0]]):.3f} <= {OVERLAP_GUARD} between samples {bad[0]} and {bad[0] + 1}"
        )
    return links


def _is_closed(snapshots) -> bool:
    a, b = getattr(snapshots[0], "point", None), getattr(snapshots[-1], "point", None)
    return a is not None and b is not None and len(snapshots) > 2 and a.isclose(b, 1e-12)


def discrete_berry_phase(snapshots: Sequence, n: int, basis_overlap=None, closed: bool | None = None) -> float:
    """Gauge-invariant Berry phase of level ``n`` from sampled eigenvectors.

    Parameters
    ----------
    snapshots : sequence of SpectrumSnapshot
        Ordered along the path. For a closed path the last snapshot sits on
        the first point; it is replaced by the first one so the product of
        overlaps is a true loop.
    n : int
        1-based level.
    basis_overlap : callable, optional
        ``basis_overlap(p, q)`` giving <m; p|k; q> when the basis itself moves
        with the parameters. Defaults to the identity.
    closed : bool, optional
        Inferred from the snapshot points when omitted.

    Returns
    -------
    float
        Closed paths: -arg of the overlap product, in (-pi, pi]. Open paths:
        minus the sum of link phases, i.e. the continuously unwrapped value.
    """
    if len(snapshots) < 3:
        raise PreconditionError("need at least 3 snapshots")
    if closed is None:
        closed = _is_closed(snapshots)
    links = _link_overlaps(snapshots, n, basis_overlap, closed)
    if closed:
        prod = complex(1.0)
        for z in links:
            prod *= z / abs(z)
        return -float(np.angle(prod))
    return -float(np.sum(np.angle(links)))


def noncyclic_phase(snapshots: Sequence, n: int, gamma: float | None = None, basis_overlap=None) -> complex:
    """Phi_n = <n; R(0)|n; R(t)> exp(i gamma_n), with gamma_n the open-path phase.

    Invariant under independent rephasing of every snapshot.
    """
    if len(snapshots) == 1:
        return complex(1.0)
    first, last = snapshots[0], snapshots[-1]
    k = n - 1
    a = np.asarray(first.states)[:, k]
    b = np.asarray(last.states)[:, k]
    if basis_overlap is not None:
        b = np.asarray(basis_overlap(first.point, last.point)) @ b
    w = complex(np.vdot(a, b))
    if gamma is None:
        if len(snapshots) == 2:
            gamma = -float(np.angle(_link_overlaps(snapshots, n, basis_overlap, False)[0]))
        else:
            gamma = discrete_berry_phase(snapshots, n, basis_overlap, closed=False)
    return w * complex(np.exp(1j * gamma))


def reality_defect(x, samples, times, walls, index: int | None = None) -> tuple[float, float]:
    """Imaginary part of the connection of a time-dependent state on a moving box.

    Parameters
    ----------
    x : ndarray
        Uniform grid covering every wall position.
    samples : ndarray, shape (T, len(x))
        State phi(x, t_k), normalized on [0, L(t_k)].
    times, walls : ndarray, shape (T,)
        Sample times and wall positions L(t_k).
    index : int, optional
        Time index at which to evaluate; defaults to the middle sample.

    Returns
    -------
    imag_part : float
        Im(i <phi|d_t phi>_mu) = Re <phi|d_t phi>_mu, with d_t by a central
        difference and the measure restricted to [0, L(t)]. The integrand
        has a kink at the wall when phi(L) != 0, so the integral uses an
        exact integration of its cubic spline rather than the trapezoid.
    boundary : float
        The prediction -Ldot |phi(L)|^2 / 2 from differentiating the norm.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(samples)
    t = np.asarray(times, dtype=float)
    w = np.asarray(walls, dtype=float)
    if s.ndim != 2 or s.shape != (t.size, x.size) or w.shape != t.shape:
        raise PreconditionError("samples must have shape (len(times), len(x))")
    k = t.size // 2 if index is None else int(index)
    if not 1 <= k <= t.size - 2:
        raise PreconditionError("need one sample on each side of the evaluation time")
    dt = t[k + 1] - t[k - 1]
    dphi = (s[k + 1] - s[k - 1]) / dt
    ldot = (w[k + 1] - w[k - 1]) / dt
    phi = s[k]
    if x[0] > 0 or x[-1] < w[k]:
        raise DomainError(f"grid does not cover the support [0, {w[k]}]")
    # only nodes inside the box enter, so samples beyond the wall (often zero-padded)
    # do not leak into the integrand or the edge value; the last cell is extrapolated
    inside = x <= w[k]
    if np.count_nonzero(inside) < 4:
        raise PreconditionError("need at least 4 grid points inside the box")
    xi = x[inside]
    spline = interpolate.CubicSpline(xi, np.real(np.conj(phi[inside]) * dphi[inside]))
    imag_part = float(spline.integrate(0.0, w[k]))
    edge = interpolate.CubicSpline(xi, phi[inside])(w[k])
    return imag_part, float(-0.5 * ldot * abs(edge) ** 2)
