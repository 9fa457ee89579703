"""Closed-form asymptotic results used to cross-check the grid solvers.

Everything here is independent of the discretisation: ring patterns of small
traps in the unit disk and its near-disk perturbations, long thin domains,
the fast-rotation limit of a moving trap, and the Neumann Green's function
of the unit disk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import CoincidentPoints, DomainError, NoRootInBracket

__all__ = [
    "kappa1",
    "kappa1_prime",
    "kappa1_second",
    "leading_avg",
    "sigma_correction",
    "chi_prime",
    "optimal_ring_radius_leading",
    "optimal_ring_radius_perturbed",
    "NearDiskCoefficients",
    "near_disk_coefficients",
    "two_trap_ellipse_expansion",
    "ThinRectResult",
    "thin_rect_two_trap",
    "thin_rect_three_trap",
    "case_map",
    "thin_ellipse_u0",
    "thin_ellipse_H",
    "thin_ellipse_three_trap",
    "fast_rotation_profile",
    "fast_rotation_derivative_equation",
    "fast_rotation_opt_radius",
    "neumann_green_disk",
    "neumann_green_disk_closed",
    "neumann_regular_part",
    "green_matrix",
    "bisect",
]


def bisect(f, lo: float, hi: float, tol: float = 1e-12, maxiter: int = 200) -> float:
    """Plain bisection for a sign change of ``f`` on ``[lo, hi]``."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise NoRootInBracket(f"no sign change on [{lo}, {hi}]")
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0 or hi - lo < tol:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- ring patterns

def _check_ring(m, rc):
    if m < 1 or int(m) != m:
        raise DomainError(f"trap count must be a positive integer, got {m}")
    if not 0.0 < rc < 1.0:
        raise DomainError(f"ring radius must lie in (0, 1), got {rc}")


def kappa1(m: int, rc: float) -> float:
    """Ring eigenvalue of the Neumann Green's matrix for ``m`` traps on radius ``rc``."""
    _check_ring(m, rc)
    return (-math.log(m * rc ** (m - 1)) - math.log1p(-rc ** (2 * m)) + m * rc**2 - 0.75 * m) / (2 * math.pi)


def kappa1_prime(m: int, rc: float) -> float:
    _check_ring(m, rc)
    q = rc ** (2 * m)
    return (-(m - 1) / rc + 2 * m * q / (rc * (1 - q)) + 2 * m * rc) / (2 * math.pi)


def kappa1_second(m: int, rc: float) -> float:
    """Second derivative of :func:`kappa1` in ``rc``."""
    _check_ring(m, rc)
    q = rc ** (2 * m)
    return m / (math.pi * rc**2) * ((m - 1) / (2 * m) + rc**2 + q / (1 - q) ** 2 * (2 * m - 1 + q))


def _nu(eps):
    if not 0.0 < eps < 1.0:
        raise DomainError(f"trap radius must lie in (0, 1), got {eps}")
    return -1.0 / math.log(eps)


def leading_avg(m: int, rc: float, eps: float, D: float = 1.0) -> float:
    """Leading-order average MFPT for a ring of ``m`` traps of radius ``eps``."""
    nu = _nu(eps)
    k1 = kappa1(m, rc)
    u0 = 1.0 / (2 * m * nu * D) + math.pi * k1 / (m * D)
    alt = (1.0 + 2 * math.pi * nu * k1) / (2 * m * nu * D)
    assert math.isclose(u0, alt, rel_tol=1e-12, abs_tol=1e-14)
    return u0


def _star_factor(m, N, rc):
    # f(rc) such that the O(sigma) correction is -cos(N psi) f / (N D)
    k = N // m
    q = rc ** (2 * m)
    return rc**N * ((2 + (N - 2) * q) / (1 - q) - 0.5 * N * (k - 1))


def _star_factor_prime(m, N, rc):
    k = N // m
    q = rc ** (2 * m)
    g = (2 + (N - 2) * q) / (1 - q)
    dg = 2 * m * N * rc ** (2 * m - 1) / (1 - q) ** 2
    return N * rc ** (N - 1) * (g - 0.5 * N * (k - 1)) + rc**N * dg


def sigma_correction(m: int, N: int, rc: float, psi: float = 0.0, D: float = 1.0) -> float:
    """``O(sigma)`` correction to the average MFPT on ``r = 1 + sigma cos(N theta)``.

    Zero unless ``N`` is a positive multiple of ``m``.
    """
    _check_ring(m, rc)
    if N <= 0 or N % m != 0:
        return 0.0
    return -math.cos(N * psi) * _star_factor(m, N, rc) / (N * D)


def chi_prime(m: int, rc: float) -> float:
    """Radial derivative of the boundary-coupling factor for ``N = m``."""
    _check_ring(m, rc)
    q = rc ** (2 * m)
    return -m * rc ** (m - 1) / (1 - q) ** 2 * ((m - 2) * q * q + (4 - 3 * m) * q - 2)


def optimal_ring_radius_leading(m: int, tol: float = 1e-12) -> float:
    """Unique root in ``(0, 1)`` of ``rc^(2m) / (1 - rc^(2m)) = (m-1)/(2m) - rc^2``."""
    if m < 2 or int(m) != m:
        raise DomainError(f"need at least two traps, got {m}")

    def f(r):
        q = r ** (2 * m)
        return q / (1 - q) - (m - 1) / (2 * m) + r * r

    return bisect(f, 1e-6, 1 - 1e-6, tol=tol)


def optimal_ring_radius_perturbed(m: int, N: int, sigma: float) -> float:
    """Two-term optimal ring radius on the perturbed disk ``r = 1 + sigma cos(N theta)``."""
    rc0 = optimal_ring_radius_leading(m)
    if sigma == 0.0 or N % m != 0:
        return rc0
    return rc0 + sigma * _rc1(m, N, rc0)


def _rc1(m, N, rc0):
    # rc1 = -U1'(rc0) / u0''(rc0) with psi = 0
    return m * _star_factor_prime(m, N, rc0) / (N * math.pi * kappa1_second(m, rc0))


@dataclass(frozen=True)
class NearDiskCoefficients:
    """``rc_opt ~ rc0 + sigma rc1`` and ``u_opt ~ u0 + sigma u1``."""

    rc0: float
    rc1: float
    u0: float
    u1: float

    def evaluate(self, sigma: float) -> tuple[float, float]:
        return self.rc0 + sigma * self.rc1, self.u0 + sigma * self.u1


def near_disk_coefficients(m: int, N: int | None = None, eps: float = 0.05, D: float = 1.0) -> NearDiskCoefficients:
    N = m if N is None else N
    rc0 = optimal_ring_radius_leading(m)
    rc1 = _rc1(m, N, rc0) if N % m == 0 else 0.0
    return NearDiskCoefficients(rc0=rc0, rc1=rc1, u0=leading_avg(m, rc0, eps, D),
                                u1=sigma_correction(m, N, rc0, 0.0, D))


def two_trap_ellipse_expansion(b: float, eps: float = 0.05, D: float = 1.0) -> tuple[float, float]:
    """Optimal trap distance and average MFPT for two traps in a near-circular ellipse.

    The ellipse has semi-axes ``1/b`` and ``b``; to first order its boundary
    is ``r = 1 + sigma cos(2 theta)`` with ``sigma = 1/b - 1``.
    """
    if not 0.0 < b <= 1.0:
        raise DomainError(f"semi-minor axis must lie in (0, 1], got {b}")
    return near_disk_coefficients(2, 2, eps, D).evaluate(1.0 / b - 1.0)


# ---------------------------------------------------------------- thin domains

@dataclass(frozen=True)
class ThinRectResult:
    """Optimum of a long thin rectangle with traps on its axis."""

    x0: float
    avg: float
    a0: float
    b0: float
    eps0: float
    n_traps: int
    eps: float
    D: float

    def curve(self, x0):
        """Average MFPT as a function of the outer trap position."""
        x0 = np.asarray(x0, dtype=float)
        a0, e0 = self.a0, self.eps0
        if self.n_traps == 2:
            poly = (a0 - 2 * e0) * x0**2 - (a0**2 - 2 * a0 * e0) * x0 + a0**3 / 3 - a0**2 * e0 \
                + a0 * e0**2 - 2 * e0**3 / 3
            c = 4 * self.b0 / (self.D * math.pi * (1 - 2 * self.eps**2))
        else:
            poly = -0.25 * x0**3 + 0.5 * (2 * a0 - 3 * e0) * x0**2 - (a0**2 - 2 * a0 * e0) * x0 \
                + a0**3 / 3 - a0**2 * e0 + a0 * e0**2 - e0**3
            c = 4 * self.b0 / (math.pi * self.D * (1 - 3 * self.eps**2))
        return c * poly


def _rect_dims(b0, eps):
    if b0 <= 0:
        raise DomainError(f"half-width must be positive, got {b0}")
    # equal total area pi and equal trap areas
    return math.pi / (4 * b0), math.pi * eps**2 / (4 * b0)


def thin_rect_two_trap(b0: float, eps: float, D: float = 1.0) -> ThinRectResult:
    """Two traps at ``(+-x0, 0)`` in the rectangle ``[-a0, a0] x [-b0, b0]``."""
    a0, e0 = _rect_dims(b0, eps)
    res = ThinRectResult(x0=a0 / 2, avg=0.0, a0=a0, b0=b0, eps0=e0, n_traps=2, eps=eps, D=D)
    return ThinRectResult(**{**res.__dict__, "avg": float(res.curve(res.x0))})


def thin_rect_three_trap(b0: float, eps: float, D: float = 1.0) -> ThinRectResult:
    """Traps at the centre and at ``(+-x0, 0)`` of the thin rectangle."""
    a0, e0 = _rect_dims(b0, eps)
    # smaller root of the quadratic derivative of the cubic average
    A, B, C = -0.75, 2 * a0 - 3 * e0, -(a0**2 - 2 * a0 * e0)
    disc = math.sqrt(B * B - 4 * A * C)
    roots = sorted(((-B + disc) / (2 * A), (-B - disc) / (2 * A)))
    x0 = roots[0]
    res = ThinRectResult(x0=x0, avg=0.0, a0=a0, b0=b0, eps0=e0, n_traps=3, eps=eps, D=D)
    return ThinRectResult(**{**res.__dict__, "avg": float(res.curve(x0))})


def case_map(variant: str, b: float, eps: float = 0.05, D: float = 1.0, n_traps: int = 2) -> ThinRectResult:
    """Thin-rectangle optimum mapped to an ellipse with semi-minor axis ``b``.

    ``"I"`` matches the length (``a0 = 1/b``), ``"II"`` the width (``b0 = b``).
    """
    if variant == "I":
        b0 = math.pi * b / 4
    elif variant == "II":
        b0 = b
    else:
        raise ValueError(f"unknown case {variant!r}")
    solver = thin_rect_two_trap if n_traps == 2 else thin_rect_three_trap
    return solver(b0, eps, D)


def _c12(d):
    s = math.asin(d)
    c2 = math.pi * s - d * d - s * s
    c1 = (d * d + s * s) / s
    return c1, c2


def thin_ellipse_u0(X, d: float, D: float = 1.0):
    """Leading-order profile along a thin ellipse with traps at ``0, +-d``."""
    if not 0.0 < d < 1.0:
        raise DomainError(f"trap position must lie in (0, 1), got {d}")
    X = np.asarray(X, dtype=float)
    c1, c2 = _c12(d)
    Y = -np.abs(X)
    s = np.arcsin(Y)
    outer = s**2 + Y**2 + math.pi * s + c2
    inner = s**2 + Y**2 + c1 * s
    return -np.where(Y <= -d, outer, inner) / (4 * D)


def thin_ellipse_H(d: float) -> float:
    """Part of the thin-ellipse average that depends on the trap position."""
    if not 0.0 < d < 1.0:
        raise DomainError(f"trap position must lie in (0, 1), got {d}")
    c1, c2 = _c12(d)
    s = math.asin(d)
    I, _ = integrate.quad(lambda X: math.asin(X) * math.sqrt(1 - X * X), -d, 0.0, epsabs=1e-12, epsrel=1e-12)
    return c2 / 2 * (d * math.sqrt(1 - d * d) + s) - c2 * math.pi / 4 + (math.pi - c1) * I


def _thin_ellipse_J():
    val, _ = integrate.quad(lambda X: math.sqrt(1 - X * X) * (math.asin(X) ** 2 + X * X + math.pi * math.asin(X)),
                            -1.0, 0.0, epsabs=1e-12, epsrel=1e-12)
    return val


def thin_ellipse_three_trap(b: float, D: float = 1.0, tol: float = 1e-10) -> tuple[float, float, float]:
    """Optimal outer-trap position and average MFPT in a thin ellipse.

    Returns ``(x0_opt, u_opt, d_opt)`` with ``x0_opt = d_opt / b``.
    """
    if b <= 0:
        raise DomainError(f"semi-minor axis must be positive, got {b}")
    res = optimize.minimize_scalar(thin_ellipse_H, bracket=(0.1, 0.5, 0.9), method="golden", tol=tol)
    d = float(res.x)
    u = (thin_ellipse_H(d) - _thin_ellipse_J()) / (math.pi * D * b * b)
    return d / b, u, d


# ---------------------------------------------------------------- fast rotation

def _fast_check(r, eta, eps):
    r = np.asarray(r, dtype=float)
    if np.any(r - eta <= eps) or np.any(r + eta >= 1.0):
        raise DomainError("need eps < r - eta and r + eta < 1")
    return r


def fast_rotation_profile(r, eta: float, eps: float, C: float = 1.0):
    """Average MFPT in the fast-rotation limit, up to the positive factor ``C``.

    The moving trap sweeps the annulus ``r - eta < rho < r + eta`` and a
    trap of radius ``eps`` sits at the centre. With ``C = 1/16`` the value
    equals the radial integral of the limiting MFPT, ``int u rho d rho``.
    """
    r = _fast_check(r, eta, eps)
    a, b = r - eta, r + eta
    L = np.log(eps / a)
    return C / L * (a**4 - 2 * a**2 * eps**2 + eps**4 + (a**4 - b**4 - eps**4 + 4 * b**2 - 4 * np.log(b) - 3) * L)


def _abc(r, eta, eps):
    e2, h2 = eps * eps, eta * eta
    A = (eps**4 * eta - 2 * e2 * eta**3 + eta**5 - 3 * eta * r**4 + r**5 - 2 * (e2 - h2) * r**3
         + 2 * (e2 * eta + eta**3) * r**2 + (eps**4 + 2 * e2 * h2 - 3 * eta**4) * r)
    B = (2 * eta**5 - 6 * eta * r**4 - 2 * eta**3 + 2 * (2 * eta**3 + eta) * r**2 + 2 * r**3
         - (2 * h2 + 1) * r + eta)
    Cc = (e2 * eta**3 - eta**5 + 3 * eta * r**4 - r**5 + (e2 - 2 * h2) * r**3
          - (e2 * eta + 2 * eta**3) * r**2 - (e2 * h2 - 3 * eta**4) * r)
    return A, B, Cc


def fast_rotation_derivative_equation(r, eta: float, eps: float):
    """Left side of the stationarity condition of :func:`fast_rotation_profile`."""
    A, B, Cc = _abc(np.asarray(r, dtype=float), eta, eps)
    L = np.log(eps / (r - eta))
    return A + 4 * B * L**2 - 4 * L * Cc


def fast_rotation_opt_radius(eta: float, eps: float, tol: float = 1e-12) -> float:
    """Optimal orbit radius of a fast trap of radius ``eta`` around a central trap ``eps``.

    ``eps = 0`` gives the limit of a vanishing central trap, where the
    logarithm dominates and the root reduces to that of the ``B`` polynomial.
    """
    if eta < 0 or eps < 0 or eta >= 0.5:
        raise DomainError("need 0 <= eta < 1/2 and eps >= 0")
    lo, hi = eps + eta + 1e-6, 1.0 - eta - 1e-6
    if eps == 0.0:
        return bisect(lambda r: _abc(r, eta, 0.0)[1], max(lo, 0.3), hi, tol=tol)
    f = lambda r: float(fast_rotation_derivative_equation(r, eta, eps))  # noqa: E731
    # the equation can also vanish next to the inner limit, where the
    # profile blows up; scan for the sign change that is a minimum
    rs = np.linspace(lo, hi, 2001)
    vals = fast_rotation_derivative_equation(rs, eta, eps)
    idx = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
    if len(idx) == 0:
        raise NoRootInBracket(f"no stationary point on ({lo}, {hi})")
    roots = [bisect(f, rs[i], rs[i + 1], tol=tol) for i in idx]
    prof = [float(fast_rotation_profile(x, eta, eps)) for x in roots]
    return roots[int(np.argmin(prof))]


# ---------------------------------------------------------------- Green's function

def _polar(x):
    x = np.asarray(x, dtype=float)
    return float(np.hypot(x[0], x[1])), float(np.arctan2(x[1], x[0]))


def neumann_green_disk(x, x0, n_terms: int = 200, return_tail: bool = False):
    """Neumann Green's function of the unit disk by its Fourier series.

    Normalised to zero mean over the disk. The series has two parts decaying
    like ``(r_< r_>)**n`` and ``(r_< / r_>)**n``. When a part would leave a
    truncation error above ``1e-13`` after ``n_terms`` terms (points at
    nearly equal radii, or on the boundary) it is summed in closed form with
    ``sum q**n cos(n phi) / n = -log(1 - 2 q cos(phi) + q**2) / 2``. With
    ``return_tail=True`` a bound on the remaining truncation error is
    returned as well.
    """
    r, th = _polar(x)
    rc, th0 = _polar(x0)
    if math.hypot(r * math.cos(th) - rc * math.cos(th0), r * math.sin(th) - rc * math.sin(th0)) == 0.0:
        raise CoincidentPoints("Green's function is singular at coincident points")
    if r > 1.0 + 1e-12 or rc > 1.0 + 1e-12:
        raise DomainError("points must lie in the closed unit disk")
    rg, rl = max(r, rc), min(r, rc)
    phi = th - th0
    n = np.arange(1, n_terms + 1)
    total, tail = 0.0, 0.0
    for q in (rl * rg, rl / rg if rg > 0 else 0.0):
        bound = 2 * q ** (n_terms + 1) / ((n_terms + 1) * (1 - q)) if q < 1 else math.inf
        if bound > 1e-13:
            total += -0.5 * math.log(1 - 2 * q * math.cos(phi) + q * q)
        else:
            total += float(np.sum(q**n / n * np.cos(n * phi)))
            tail += bound
    g = (r * r + rc * rc) / (4 * math.pi) - 3 / (8 * math.pi) - math.log(rg) / (2 * math.pi) \
        + total / (2 * math.pi)
    if not return_tail:
        return g
    return g, tail / (2 * math.pi)


def neumann_green_disk_closed(x, x0) -> float:
    """Closed form of :func:`neumann_green_disk` via the image point."""
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    d = np.linalg.norm(x - x0)
    if d == 0.0:
        raise CoincidentPoints("Green's function is singular at coincident points")
    r0 = np.linalg.norm(x0)
    img = np.linalg.norm(x * r0 - x0 / r0) if r0 > 0 else 1.0
    return float(-(math.log(d) + math.log(img)) / (2 * math.pi) + (x @ x + r0 * r0) / (4 * math.pi)
                 - 3 / (8 * math.pi))


def neumann_regular_part(x0) -> float:
    """Regular part ``R(x0; x0)`` of the Neumann Green's function of the unit disk."""
    r2 = float(np.dot(x0, x0))
    if r2 >= 1.0:
        raise DomainError("point must lie inside the unit disk")
    return (-math.log(1 - r2) + r2) / (2 * math.pi) - 3 / (8 * math.pi)


def green_matrix(points, n_terms: int = 200) -> np.ndarray:
    """Symmetric Green's matrix: regular parts on the diagonal, ``G`` off it."""
    pts = np.asarray(points, dtype=float)
    m = len(pts)
    G = np.empty((m, m))
    for i in range(m):
        G[i, i] = neumann_regular_part(pts[i])
        for j in range(i + 1, m):
            G[i, j] = G[j, i] = neumann_green_disk(pts[i], pts[j], n_terms)
    return G
