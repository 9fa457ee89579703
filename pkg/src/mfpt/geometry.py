"""Confining domains, traps and closest-point queries.

All shapes are immutable dataclasses. The vectorised queries take arrays of
points with shape ``(n, 2)``; the scalar helpers at the bottom wrap them for
single-point use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Disk",
    "Ellipse",
    "Star",
    "Rectangle",
    "StationaryTrap",
    "RingOrbitTrap",
    "EllipseOrbitTrap",
    "CpResult",
    "closest_point",
    "closest_points",
    "mirror_point",
    "trap_center",
    "trap_centers",
    "star_cp",
    "INTERIOR",
    "OUTER",
]

# region codes used by the vectorised queries; trap k is coded as k >= 0
INTERIOR = -1
OUTER = -2

_NEWTON_TOL = 1e-12
_NEWTON_MAXIT = 60


def _as_points(x) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, 2)
    return pts


def _project_parametric(pts, curve, n_seeds):
    """Project points onto a closed parametric curve.

    ``curve(t)`` returns the point, first and second derivative arrays. Every
    point is polished by a safeguarded Newton iteration from ``n_seeds``
    equispaced parameters; the candidate with the smallest distance wins.
    """
    n = len(pts)
    seeds = 2.0 * np.pi * np.arange(n_seeds) / n_seeds
    t = np.broadcast_to(seeds, (n, n_seeds)).copy()
    px = pts[:, 0:1]
    py = pts[:, 1:2]
    max_step = np.pi / n_seeds
    for _ in range(_NEWTON_MAXIT):
        (gx, gy), (dx, dy), (ddx, ddy) = curve(t)
        rx = px - gx
        ry = py - gy
        # derivatives of 0.5 * |x - gamma(t)|^2
        g1 = -(rx * dx + ry * dy)
        g2 = dx * dx + dy * dy - (rx * ddx + ry * ddy)
        speed2 = dx * dx + dy * dy
        newton = np.where(g2 > 0.0, -g1 / np.where(g2 > 0.0, g2, 1.0), -g1 / speed2)
        step = np.clip(newton, -max_step, max_step)
        t = t + step
        if np.max(np.abs(step)) < _NEWTON_TOL:
            break
    (gx, gy), _, _ = curve(t)
    d2 = (px - gx) ** 2 + (py - gy) ** 2
    best = np.argmin(d2, axis=1)
    rows = np.arange(n)
    tb = t[rows, best]
    (gx, gy), _, _ = curve(tb)
    return np.column_stack([gx, gy]), np.mod(tb, 2.0 * np.pi)


@dataclass(frozen=True)
class Disk:
    """Disk of radius ``R`` centred at the origin."""

    R: float = 1.0

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("disk radius must be positive")

    @property
    def area(self) -> float:
        return math.pi * self.R**2

    @property
    def circumradius(self) -> float:
        return self.R

    def bbox(self):
        return (-self.R, self.R, -self.R, self.R)

    def contains(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        return np.hypot(pts[:, 0], pts[:, 1]) <= self.R

    def approx_distance(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        return np.abs(np.hypot(pts[:, 0], pts[:, 1]) - self.R)

    def project(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        r = np.hypot(pts[:, 0], pts[:, 1])
        out = np.empty_like(pts)
        nz = r > 0
        out[nz] = pts[nz] * (self.R / r[nz])[:, None]
        out[~nz] = (self.R, 0.0)
        return out

    def normal(self, foot) -> np.ndarray:
        foot = _as_points(foot)
        return foot / np.hypot(foot[:, 0], foot[:, 1])[:, None]

    def is_rotation_invariant(self) -> bool:
        return True


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned ellipse with semi-axes ``a`` (along x) and ``b``."""

    a: float
    b: float
    n_seeds: int = 8

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError("ellipse needs a >= b > 0")

    @property
    def area(self) -> float:
        return math.pi * self.a * self.b

    @property
    def circumradius(self) -> float:
        return self.a

    def bbox(self):
        return (-self.a, self.a, -self.b, self.b)

    def contains(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        return (pts[:, 0] / self.a) ** 2 + (pts[:, 1] / self.b) ** 2 <= 1.0

    def approx_distance(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        x, y = pts[:, 0], pts[:, 1]
        f = (x / self.a) ** 2 + (y / self.b) ** 2 - 1.0
        grad = 2.0 * np.hypot(x / self.a**2, y / self.b**2)
        return np.abs(f) / np.maximum(grad, 1e-300)

    def _curve(self, t):
        c, s = np.cos(t), np.sin(t)
        a, b = self.a, self.b
        return (a * c, b * s), (-a * s, b * c), (-a * c, -b * s)

    def project(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        if len(pts) == 0:
            return pts.copy()
        return _project_parametric(pts, self._curve, self.n_seeds)[0]

    def normal(self, foot) -> np.ndarray:
        foot = _as_points(foot)
        n = np.column_stack([foot[:, 0] / self.a**2, foot[:, 1] / self.b**2])
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    def is_rotation_invariant(self) -> bool:
        return self.a == self.b


@dataclass(frozen=True)
class Star:
    """Star-shaped domain with boundary ``r = 1 + sigma cos(N theta)``."""

    sigma: float
    N: int

    def __post_init__(self):
        if not (0 < self.sigma < 1):
            raise ValueError("star amplitude must lie in (0, 1)")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("star fold count must be an integer >= 2")

    @property
    def n_seeds(self) -> int:
        return max(8, 4 * int(self.N))

    @property
    def area(self) -> float:
        return math.pi * (1.0 + 0.5 * self.sigma**2)

    @property
    def circumradius(self) -> float:
        return 1.0 + self.sigma

    def bbox(self):
        r = 1.0 + self.sigma
        return (-r, r, -r, r)

    def radius(self, theta):
        return 1.0 + self.sigma * np.cos(self.N * theta)

    def contains(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        th = np.arctan2(pts[:, 1], pts[:, 0])
        return np.hypot(pts[:, 0], pts[:, 1]) <= self.radius(th)

    def approx_distance(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        r = np.hypot(pts[:, 0], pts[:, 1])
        th = np.arctan2(pts[:, 1], pts[:, 0])
        f = r - self.radius(th)
        tang = self.sigma * self.N * np.sin(self.N * th) / np.maximum(r, 1e-12)
        return np.abs(f) / np.sqrt(1.0 + tang**2)

    def _curve(self, t):
        s, N = self.sigma, self.N
        c, si = np.cos(t), np.sin(t)
        r = 1.0 + s * np.cos(N * t)
        r1 = -s * N * np.sin(N * t)
        r2 = -s * N * N * np.cos(N * t)
        g = (r * c, r * si)
        d1 = (r1 * c - r * si, r1 * si + r * c)
        d2 = (r2 * c - 2 * r1 * si - r * c, r2 * si + 2 * r1 * c - r * si)
        return g, d1, d2

    def project(self, pts) -> np.ndarray:
        return self.project_with_param(pts)[0]

    def project_with_param(self, pts):
        pts = _as_points(pts)
        if len(pts) == 0:
            return pts.copy(), np.zeros(0)
        return _project_parametric(pts, self._curve, self.n_seeds)

    def tangent(self, theta) -> np.ndarray:
        _, (dx, dy), _ = self._curve(np.asarray(theta, dtype=float))
        return np.column_stack([np.ravel(dx), np.ravel(dy)])

    def normal(self, foot) -> np.ndarray:
        foot = _as_points(foot)
        th = np.arctan2(foot[:, 1], foot[:, 0])
        t = self.tangent(th)
        n = np.column_stack([t[:, 1], -t[:, 0]])
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    def is_rotation_invariant(self) -> bool:
        return False


@dataclass(frozen=True)
class Rectangle:
    """Rectangle ``[-a0, a0] x [-b0, b0]``."""

    a0: float
    b0: float

    def __post_init__(self):
        if not (self.a0 > 0 and self.b0 > 0):
            raise ValueError("rectangle half-widths must be positive")

    @property
    def area(self) -> float:
        return 4.0 * self.a0 * self.b0

    @property
    def circumradius(self) -> float:
        return math.hypot(self.a0, self.b0)

    def bbox(self):
        return (-self.a0, self.a0, -self.b0, self.b0)

    def contains(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        return (np.abs(pts[:, 0]) <= self.a0) & (np.abs(pts[:, 1]) <= self.b0)

    def approx_distance(self, pts) -> np.ndarray:
        return np.linalg.norm(_as_points(pts) - self.project(pts), axis=1)

    def project(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        x = np.clip(pts[:, 0], -self.a0, self.a0)
        y = np.clip(pts[:, 1], -self.b0, self.b0)
        inside = (np.abs(pts[:, 0]) < self.a0) & (np.abs(pts[:, 1]) < self.b0)
        # interior points go to the nearest side
        if np.any(inside):
            xi, yi = pts[inside, 0], pts[inside, 1]
            dx = self.a0 - np.abs(xi)
            dy = self.b0 - np.abs(yi)
            to_x = dx <= dy
            x[inside] = np.where(to_x, np.copysign(self.a0, xi), xi)
            y[inside] = np.where(to_x, yi, np.copysign(self.b0, yi))
        return np.column_stack([x, y])

    def normal(self, foot) -> np.ndarray:
        foot = _as_points(foot)
        n = np.zeros_like(foot)
        onx = np.isclose(np.abs(foot[:, 0]), self.a0)
        n[onx, 0] = np.sign(foot[onx, 0])
        n[~onx, 1] = np.sign(foot[~onx, 1])
        return n

    def is_rotation_invariant(self) -> bool:
        return False


DomainSpec = Union[Disk, Ellipse, Star, Rectangle]


@dataclass(frozen=True)
class StationaryTrap:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("trap radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def moving(self) -> bool:
        return False


@dataclass(frozen=True)
class RingOrbitTrap:
    """Trap whose centre runs counter-clockwise on a circle of radius ``r0``."""

    r0: float
    radius: float
    omega: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("trap radius must be positive")

    @property
    def moving(self) -> bool:
        return self.omega != 0.0 and self.r0 != 0.0

    @property
    def period(self) -> float:
        return 2.0 * math.pi / abs(self.omega)

    @property
    def orbit_radius(self) -> float:
        return abs(self.r0)


@dataclass(frozen=True)
class EllipseOrbitTrap:
    """Trap on the scaled ellipse ``(scale a cos wt, scale b sin wt)``."""

    scale: float
    radius: float
    omega: float
    a: float
    b: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("trap radius must be positive")

    @property
    def moving(self) -> bool:
        return self.omega != 0.0 and self.scale != 0.0

    @property
    def period(self) -> float:
        return 2.0 * math.pi / abs(self.omega)

    @property
    def orbit_radius(self) -> float:
        return abs(self.scale) * max(self.a, self.b)


TrapSpec = Union[StationaryTrap, RingOrbitTrap, EllipseOrbitTrap]


def trap_center(trap: TrapSpec, t: float = 0.0) -> tuple:
    """Centre of ``trap`` at time ``t``."""
    if isinstance(trap, StationaryTrap):
        return trap.center
    arg = trap.omega * t + trap.phase
    if isinstance(trap, RingOrbitTrap):
        return (trap.r0 * math.cos(arg), trap.r0 * math.sin(arg))
    if isinstance(trap, EllipseOrbitTrap):
        return (trap.scale * trap.a * math.cos(arg), trap.scale * trap.b * math.sin(arg))
    raise TypeError(f"unknown trap type {type(trap).__name__}")


def trap_centers(traps: Sequence[TrapSpec], t: float = 0.0) -> np.ndarray:
    return np.array([trap_center(tr, t) for tr in traps], dtype=float).reshape(-1, 2)


def mirror_point(x, cp) -> np.ndarray:
    """Reflection of ``x`` through ``cp``, i.e. ``2 cp - x``."""
    return 2.0 * np.asarray(cp, dtype=float) - np.asarray(x, dtype=float)


def project_to_trap(pts, center, radius) -> np.ndarray:
    """Radial projection onto a trap circle; the centre maps to angle 0."""
    pts = _as_points(pts)
    d = pts - np.asarray(center, dtype=float)
    r = np.hypot(d[:, 0], d[:, 1])
    out = np.empty_like(pts)
    nz = r > 0
    out[nz] = center + d[nz] * (radius / r[nz])[:, None]
    out[~nz] = (center[0] + radius, center[1])
    return out


def closest_points(domain: DomainSpec, traps: Sequence[TrapSpec], t: float, pts):
    """Vectorised closest point of the trap-free domain.

    Returns
    -------
    cp : ndarray (n, 2)
    dist : ndarray (n,)
    region : ndarray of int
        ``INTERIOR``, ``OUTER`` or the index of the trap whose circle holds cp.
    """
    pts = _as_points(pts)
    n = len(pts)
    cp = pts.copy()
    region = np.full(n, INTERIOR, dtype=int)
    centers = trap_centers(traps, t)
    for k, tr in enumerate(traps):
        c = centers[k]
        inside = (np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1]) < tr.radius) & (region == INTERIOR)
        if np.any(inside):
            cp[inside] = project_to_trap(pts[inside], c, tr.radius)
            region[inside] = k
    outside = ~domain.contains(pts)
    if np.any(outside):
        cp[outside] = domain.project(pts[outside])
        region[outside] = OUTER
    dist = np.hypot(pts[:, 0] - cp[:, 0], pts[:, 1] - cp[:, 1])
    return cp, dist, region


@dataclass(frozen=True)
class CpResult:
    cp: tuple
    distance: float
    region: str
    trap: int | None = None


def _to_result(cp, dist, region) -> CpResult:
    cp = (float(cp[0]), float(cp[1]))
    if region == INTERIOR:
        return CpResult(cp, float(dist), "interior")
    if region == OUTER:
        return CpResult(cp, float(dist), "outer_boundary_side")
    return CpResult(cp, float(dist), "trap_side", int(region))


def closest_point(domain: DomainSpec, traps: Sequence[TrapSpec], t: float, x) -> CpResult:
    """Closest point of the trap-free domain to a single point ``x``.

    Points inside a trap project radially onto its circle (the exact centre
    goes to angle 0); points outside the domain project onto the outer
    boundary; everything else is its own closest point.
    """
    cp, dist, region = closest_points(domain, traps, t, x)
    return _to_result(cp[0], dist[0], region[0])


def star_cp(sigma: float, N: int, x) -> CpResult:
    """Closest point for the star domain ``r = 1 + sigma cos(N theta)``."""
    return closest_point(Star(sigma, N), (), 0.0, x)
