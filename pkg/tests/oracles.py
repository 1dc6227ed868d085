"""Independent reference computations used by the tests.

None of these call into the package's numerical kernels; they rebuild the
quantity by a different route (higher precision, quadrature, a different
discretization) so that agreement is informative.
"""
import math

import mpmath
import numpy as np
from scipy import integrate
from scipy.linalg import solve_banded


# ------------------------------------------------------------------ spectra

def mp_eigvalsh(H, dps=40, exact=False):
    """Eigenvalues of a Hermitian matrix at ``dps`` digits, from the same float64 entries.

    With ``exact`` the sorted mpf values are returned instead of floats.
    """
    H = np.asarray(H, dtype=complex)
    with mpmath.workdps(dps):
        A = mpmath.matrix(H.shape[0], H.shape[1])
        for i in range(H.shape[0]):
            for j in range(H.shape[1]):
                A[i, j] = mpmath.mpc(float(H[i, j].real), float(H[i, j].imag))
        w = sorted(mpmath.re(v) for v in mpmath.eighe(A, eigvals_only=True))
        return w if exact else np.array([float(v) for v in w])


def series_error_mp(energy_coeffs, eps, exact_value, dps=40):
    """|sum_l E^(l) eps^l - exact| with the sum and difference carried out at ``dps`` digits.

    The coefficients stay float64; only the final summation is lifted so that
    errors below one ulp of E^(0) remain measurable.
    """
    with mpmath.workdps(dps):
        e = mpmath.mpf(float(eps))
        total = mpmath.fsum(mpmath.mpf(float(c)) * e ** k for k, c in enumerate(energy_coeffs))
        return float(abs(total - exact_value))


def two_level_eigenvalues(eps):
    """E0 = (0, 1), h = sigma_x: (1 -+ sqrt(1 + 4 eps^2)) / 2."""
    r = math.sqrt(1.0 + 4.0 * eps * eps)
    return np.array([(1.0 - r) / 2.0, (1.0 + r) / 2.0])


def transformed_c1(m, n, hbar=1.0):
    """Closed-form first-order coefficient of the transformed model."""
    return 4j * (-1) ** (m + n) * m * n / (hbar * math.pi ** 2 * (m * m - n * n) ** 2)


def effective_c1(m, n, hbar=1.0):
    """Closed-form first-order coefficient of the effective (plus) model."""
    return 4j * (-1) ** (m + n + 1) * m * n / (hbar * math.pi ** 2 * (m * m - n * n) ** 2)


def box_a0_formula(m, n, L):
    """Closed form of i <m|d/dL|n> for the [0, L] sine basis, m != n."""
    return 2j * m * n * (-1) ** (m + n) / ((m * m - n * n) * L)


def box_a0_quadrature(m, n, L):
    """i <m|d/dL|n> by adaptive quadrature, differentiating the mode in L by hand."""
    c = math.sqrt(2.0 / L)
    k = n * math.pi / L
    # d/dL [sqrt(2/L) sin(k x)] with k = n pi / L
    dphi = lambda x: -c * math.sin(k * x) / (2 * L) - c * (k * x / L) * math.cos(k * x)
    phi_m = lambda x: c * math.sin(m * math.pi * x / L)
    val, _ = integrate.quad(lambda x: phi_m(x) * dphi(x), 0.0, L, limit=400, epsabs=1e-13, epsrel=1e-13)
    return 1j * val


# ------------------------------------------------------------------ sums

def leading_sum_mp(n, dps=30):
    """sum over m != n of m^2 n^2 / (m^2 - n^2)^3 by mpmath series acceleration."""
    with mpmath.workdps(dps):
        f = lambda m: m * m * n * n / (m * m - n * n) ** 3
        head = mpmath.fsum(f(mpmath.mpf(m)) for m in range(1, 2 * n + 1) if m != n)
        tail = mpmath.nsum(f, [2 * n + 1, mpmath.inf])
        return float(head + tail)


def rectangle_loop_rl(l_range, r_range):
    """Counterclockwise loop integral of R L dL around a rectangle in (L, R)."""
    (la, lb), (ra, rb) = l_range, r_range
    return -(rb - ra) * (lb * lb - la * la) / 2.0


# ------------------------------------------------------------------ reality

def reality_boundary_value(phi_at_wall, ldot):
    """Predicted Im of the time component for a state not vanishing at the moving wall."""
    return -ldot * abs(phi_at_wall) ** 2 / 2.0


# ------------------------------------------------------------------ moving grid

def moving_grid_solver(u0, L, Ldot, tau, dt, hbar=1.0, mass=1.0):
    """Crank-Nicolson on the comoving grid xi in [0, 1].

    u(xi, t) = sqrt(L) psi(L xi, t) obeys
        i hbar u_t = -(hbar^2 / (2 M L^2)) u_xixi + i hbar (Ldot / L) K u,
    K = (xi d + d xi) / 2, discretized as an antisymmetric tridiagonal
    matrix. ``u0`` holds the interior values on J - 1 equally spaced nodes.
    Returns the interior values at t = tau.
    """
    u = np.asarray(u0, dtype=complex).copy()
    J = u.size + 1
    h = 1.0 / J
    xi = np.arange(1, J) * h
    xi_full = np.arange(0, J + 1) * h
    # K_{j, j+1} = (xi_j + xi_{j+1}) / (4h), K_{j+1, j} = -K_{j, j+1}
    k_up = (xi_full[1:-2] + xi_full[2:-1]) / (4 * h)
    nsteps = int(math.ceil(tau / dt - 1e-12))
    step = tau / nsteps
    for s in range(nsteps):
        t = (s + 0.5) * step
        ell, ld = L(t), Ldot(t)
        kin = hbar * hbar / (2 * mass * ell * ell * h * h)
        diag = np.full(J - 1, 2 * kin, dtype=complex)
        up = np.full(J - 2, -kin, dtype=complex) + 1j * hbar * (ld / ell) * k_up
        lo = np.full(J - 2, -kin, dtype=complex) - 1j * hbar * (ld / ell) * k_up
        a = 1j * step / (2 * hbar)
        rhs = u - a * (diag * u)
        rhs[:-1] -= a * up * u[1:]
        rhs[1:] -= a * lo * u[:-1]
        ab = np.zeros((3, J - 1), dtype=complex)
        ab[0, 1:] = a * up
        ab[1] = 1 + a * diag
        ab[2, :-1] = a * lo
        u = solve_banded((1, 1), ab, rhs)
    return xi, u


# ------------------------------------------------------------------ synthetic family

class RotatingFamily:
    """H(theta, s) = U(theta) (diag e + s h) U(theta)^dagger with U = exp(i theta G).

    Its exact eigenvectors and their connection are computed by dense
    diagonalization and finite differences, independent of the series.
    """

    def __init__(self, size=6, seed=3):
        from scipy.linalg import expm
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
        h = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
        self.G = (g + g.conj().T) / 2
        self.h = (h + h.conj().T) / 2
        self.e = np.arange(size) * 1.0 + 0.3 * np.arange(size) ** 2
        self._expm = expm
        self.size = size

    def U(self, theta):
        return self._expm(1j * theta * self.G)

    def a0(self, point, direction):
        if direction != "theta":
            return np.zeros((self.size, self.size), dtype=complex)
        u = self.U(point["theta"])
        return -u.conj().T @ self.G @ u

    def exact_vectors(self, point):
        u = self.U(point["theta"])
        H = u @ (np.diag(self.e) + point["s"] * self.h) @ u.conj().T
        _, v = np.linalg.eigh(H)
        # rephase so that <reference column | v> is real positive
        ov = np.einsum("in,in->n", u.conj(), v)
        return v * (np.abs(ov) / ov)[None, :]

    def exact_connection(self, point, direction, h=1e-4):
        def central(step):
            vp = self.exact_vectors(point.shifted(direction, step))
            vm = self.exact_vectors(point.shifted(direction, -step))
            v = self.exact_vectors(point)
            return np.real(1j * np.einsum("in,in->n", v.conj(), (vp - vm) / (2 * step)))
        return (4 * central(h / 2) - central(h)) / 3
