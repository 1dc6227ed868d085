"""Arbitrary-order Rayleigh-Schroedinger perturbation theory for H = H0 + eps h.

Coefficients follow the convention

    E_n(eps)  = sum_l E_n^(l) eps^l
    |n(eps)>  = sum_l sum_m C^l_mn eps^l |m>_0

with C^0 = identity, Im C^l_nn = 0 and Re C^l_nn fixed by normalization order
by order. Everything is expressed in the eigenbasis of H0, so a base snapshot
with non-trivial eigenvectors is handled by rotating the coupling first.

Sums over intermediate states run over the truncated basis. For the box
models the coupling decays like 1/(m^2 - n^2), which leaves an O(1/N^3) bias
in the coefficients.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import OperatorMatrix, SpectrumSnapshot, _frozen, check_gaps
from .errors import ConvergenceWarning, DegeneracyError, NumericRangeError, PreconditionError

CONVERGENCE_WARN_RATIO = 0.5


@dataclass(frozen=True)
class PerturbationExpansion:
    """Series coefficients through order ``order``.

    Attributes
    ----------
    energy_coeffs : ndarray, shape (K+1, N)
        ``energy_coeffs[l, n]`` is E^(l) of level n+1.
    vector_coeffs : ndarray, shape (K+1, N, N)
        ``vector_coeffs[l, m, n]`` is C^l_mn.
    base : SpectrumSnapshot
        Eigen-decomposition of H0.
    coupling : OperatorMatrix
        The perturbation h in the original basis.
    """

    order: int
    energy_coeffs: np.ndarray
    vector_coeffs: np.ndarray
    base: SpectrumSnapshot
    coupling: OperatorMatrix

    def __post_init__(self):
        e = np.asarray(self.energy_coeffs, dtype=float)
        c = np.asarray(self.vector_coeffs, dtype=complex)
        if e.shape[0] != self.order + 1 or c.shape[0] != self.order + 1:
            raise PreconditionError("coefficient arrays do not match the stated order")
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(c))):
            raise NumericRangeError("perturbation coefficients overflowed")
        object.__setattr__(self, "energy_coeffs", _frozen(e))
        object.__setattr__(self, "vector_coeffs", _frozen(c))

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def coupling_eigenbasis(self) -> np.ndarray:
        """<m|h|n>_0 in the H0 eigenbasis."""
        v = self.base.states
        return v.conj().T @ self.coupling.entries @ v

    def check_invariants(self) -> dict[str, float]:
        """Return the worst violation of each structural identity.

        Nothing is raised; callers compare the values against ``tol``. Keys: ``c0``, ``c1_antihermitian``, ``diag_real``, ``normalization``,
        ``e1_diagonal``. Values are absolute deviations scaled by the largest
        off-diagonal coefficient of the same order (or 1).
        """
        c = self.vector_coeffs
        n = self.dim
        out = {"c0": float(np.max(np.abs(c[0] - np.eye(n))))}
        if self.order >= 1:
            s1 = max(1.0, float(np.max(np.abs(c[1]))))
            out["c1_antihermitian"] = float(np.max(np.abs(c[1] + c[1].conj().T))) / s1
            hb = self.coupling_eigenbasis
            out["e1_diagonal"] = float(np.max(np.abs(self.energy_coeffs[1] - np.diagonal(hb).real)))
        diag_imag, norm_dev = 0.0, 0.0
        for j in range(1, self.order + 1):
            sj = max(1.0, float(np.max(np.abs(c[j]))))
            d = np.diagonal(c[j])
            diag_imag = max(diag_imag, float(np.max(np.abs(d.imag))) / sj)
            target = -0.5 * sum(np.einsum("rn,rn->n", c[k], c[j - k].conj()) for k in range(1, j))
            norm_dev = max(norm_dev, float(np.max(np.abs(d.real - np.real(target)))) / sj)
        out["diag_real"] = diag_imag
        out["normalization"] = norm_dev
        return out


def _inverse_gaps(e0: np.ndarray) -> np.ndarray:
    # [m, n] -> 1 / (E_n - E_m), zero on the diagonal
    gap = e0[None, :] - e0[:, None]
    np.fill_diagonal(gap, 1.0)
    inv = 1.0 / gap
    np.fill_diagonal(inv, 0.0)
    return inv


def _check(base: SpectrumSnapshot, h: OperatorMatrix):
    if not isinstance(h, OperatorMatrix):
        h = OperatorMatrix(h)
    if h.dim != base.dim:
        raise PreconditionError(f"coupling dim {h.dim} does not match base dim {base.dim}")
    if not h.hermitian:
        raise PreconditionError("coupling must be Hermitian")
    check_gaps(base.energies, base.gap_tol)
    gaps = np.diff(base.energies)
    if gaps.size and np.min(gaps) <= 0:
        k = int(np.argmin(gaps))
        raise DegeneracyError(f"levels {k + 1} and {k + 2} are exactly degenerate", levels=(k + 1, k + 2))
    return h


def first_order(base: SpectrumSnapshot, h: OperatorMatrix) -> tuple[np.ndarray, np.ndarray]:
    """First-order energies and mixing coefficients.

    Returns
    -------
    E1 : ndarray
        ``<n|h|n>_0``, real.
    C1 : ndarray
        ``C1[m, n] = <m|h|n>_0 / (E_n - E_m)`` off the diagonal, zero on it.
    """
    h = _check(base, h)
    v = base.states
    hb = v.conj().T @ h.entries @ v
    e1 = np.diagonal(hb).real.copy()
    c1 = hb * _inverse_gaps(base.energies)
    return e1, c1


def zeroth_order(base: SpectrumSnapshot, h: OperatorMatrix) -> PerturbationExpansion:
    h = _check(base, h)
    n = base.dim
    return PerturbationExpansion(0, base.energies[None, :], np.eye(n, dtype=complex)[None], base, h)


def extend_order(exp: PerturbationExpansion, target: int) -> PerturbationExpansion:
    """Extend ``exp`` through order ``target`` using the standard recursion.

    For l >= 2, with P[m, r] = (E_r - E_m) C1[m, r] (the coupling off the
    diagonal):

        E^(l)_n = sum_r P[n, r] C^{l-1}_rn - sum_{k=2}^{l-1} E^(k)_n C^{l-k}_nn
        C^l_mn  = [ sum_r P[m, r] C^{l-1}_rn + (E^(1)_m - E^(1)_n) C^{l-1}_mn
                    - sum_{k=2}^{l-1} E^(k)_n C^{l-k}_mn ] / (E_n - E_m)      (m != n)
        C^l_nn  = -1/2 sum_{k=1}^{l-1} sum_r C^k_rn conj(C^{l-k}_rn)
    """
    if target < 0:
        raise PreconditionError("order must be >= 0")
    if target <= exp.order:
        return exp
    base = exp.base
    n = base.dim
    e0 = base.energies
    E = [row.copy() for row in exp.energy_coeffs]
    C = [mat.copy() for mat in exp.vector_coeffs]
    inv = _inverse_gaps(e0)
    off = 1.0 - np.eye(n)
    if len(E) == 1:
        e1, c1 = first_order(base, exp.coupling)
        E.append(e1)
        C.append(c1)
    c1 = C[1]
    p = (e0[None, :] - e0[:, None]) * c1
    de1 = (E[1][:, None] - E[1][None, :]) * inv
    idx = np.arange(n)
    with np.errstate(over="raise", invalid="raise"):
        try:
            for l in range(len(E), target + 1):
                el = np.einsum("nr,rn->n", p, C[l - 1])
                for k in range(2, l):
                    el = el - E[k] * np.diagonal(C[l - k])
                E.append(el.real.copy())
                cl = (p @ C[l - 1]) * inv + de1 * C[l - 1]
                for k in range(2, l):
                    cl = cl - (E[k][None, :] * C[l - k]) * inv
                cl = cl * off
                d = np.zeros(n, dtype=complex)
                for k in range(1, l):
                    d = d + np.einsum("rn,rn->n", C[k], C[l - k].conj())
                cl[idx, idx] = -0.5 * d.real
                C.append(cl)
        except FloatingPointError as exc:
            raise NumericRangeError(f"perturbation coefficients overflowed at order {l}") from exc
    return PerturbationExpansion(target, np.array(E), np.array(C), base, exp.coupling)


def expand(base: SpectrumSnapshot, h: OperatorMatrix, order: int) -> PerturbationExpansion:
    """Convenience wrapper: zeroth order, then ``extend_order``."""
    return extend_order(zeroth_order(base, h), order)


def _level_index(exp: PerturbationExpansion, n: int) -> int:
    if not 1 <= n <= exp.dim:
        raise PreconditionError(f"level {n} outside 1..{exp.dim}")
    return n - 1


def assemble_eigenvector(exp: PerturbationExpansion, n: int, eps: float) -> np.ndarray:
    """Partial sum of the eigenvector series for level ``n`` (1-based), in the H0 eigenbasis.

    The result is not renormalized.
    """
    i = _level_index(exp, n)
    powers = float(eps) ** np.arange(exp.order + 1)
    return np.einsum("l,lm->m", powers, exp.vector_coeffs[:, :, i])


def series_terms(exp: PerturbationExpansion, n: int, eps: float) -> np.ndarray:
    i = _level_index(exp, n)
    return exp.energy_coeffs[:, i] * float(eps) ** np.arange(exp.order + 1)


def convergence_ratio(exp: PerturbationExpansion, n: int, eps: float) -> float:
    """Per-order ratio between the last two non-vanishing terms of the energy series.

    Terms that vanish identically (e.g. odd orders of a parity-symmetric
    problem) are skipped; the ratio is normalized to one order by taking the
    appropriate root. Returns 0 when fewer than two terms survive.
    """
    t = np.abs(series_terms(exp, n, eps))
    scale = t.max() if t.size else 0.0
    keep = np.nonzero(t > 1e-13 * scale)[0] if scale > 0 else np.array([], int)
    if keep.size < 2:
        return 0.0
    hi, lo = keep[-1], keep[-2]
    return float((t[hi] / t[lo]) ** (1.0 / (hi - lo)))


def series_eigenvalue(exp: PerturbationExpansion, n: int, eps: float, warn: bool = True) -> float:
    """Partial sum of the energy series for level ``n`` (1-based)."""
    terms = series_terms(exp, n, eps)
    if warn and exp.order >= 1 and eps != 0:
        r = convergence_ratio(exp, n, eps)
        if r > CONVERGENCE_WARN_RATIO:
            warnings.warn(f"series ratio {r:.3g} > {CONVERGENCE_WARN_RATIO} for level {n}, eps={eps:g}",
                          ConvergenceWarning, stacklevel=2)
    return float(np.sum(terms))


def residual_norm(exp: PerturbationExpansion, n: int, eps: float) -> float:
    """||(H0 + eps h - E_series) v_series|| evaluated in the H0 eigenbasis."""
    v = assemble_eigenvector(exp, n, eps)
    e = series_eigenvalue(exp, n, eps, warn=False)
    h = np.diag(exp.base.energies).astype(complex) + eps * exp.coupling_eigenbasis
    return float(np.linalg.norm(h @ v - e * v))
