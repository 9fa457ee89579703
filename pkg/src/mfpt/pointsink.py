"""Singular subtraction for traps smaller than the grid spacing.

A trap of radius ``eps`` below the grid spacing cannot be represented by the
closest-point extension. Near such a trap the MFPT behaves like
``A log(r / eps)`` plus a smooth remainder, so we write

    u = v + sum_j A_j S_j,    S_j = chi_j(r_j) log(r_j / eps_j),

with ``chi_j`` a smooth radial cutoff equal to one near the trap and zero
beyond ``R2``. The remainder ``v`` is smooth and solved on the grid. The
strengths ``A_j`` follow from requiring ``u = 0`` on each trap circle, which
to leading order in ``eps`` is ``v(c_j) + sum_{i != j} A_i S_i(c_j) = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import TrapTooSmall
from .geometry import trap_centers

__all__ = ["PointSinks", "cutoff", "sink_profile", "sink_laplacian", "sink_integral", "make_point_sinks"]


DEFAULT_CUTOFF = 0.25


def cutoff(r, r1, r2):
    """C3 smoothstep: 1 for ``r <= r1``, 0 for ``r >= r2``.

    Returns the value and the first two radial derivatives.
    """
    r = np.asarray(r, dtype=float)
    w = r2 - r1
    s = np.clip((r - r1) / w, 0.0, 1.0)
    p = 35 * s**4 - 84 * s**5 + 70 * s**6 - 20 * s**7
    dp = 140 * s**3 - 420 * s**4 + 420 * s**5 - 140 * s**6
    ddp = 420 * s**2 - 1680 * s**3 + 2100 * s**4 - 840 * s**5
    inside = (r > r1) & (r < r2)
    return 1.0 - p, np.where(inside, -dp / w, 0.0), np.where(inside, -ddp / w**2, 0.0)


def sink_profile(r, eps, r1, r2):
    r = np.asarray(r, dtype=float)
    chi, _, _ = cutoff(r, r1, r2)
    safe = np.where(r > 0, r, eps)
    return np.where(r < r2, chi * np.log(safe / eps), 0.0)


def sink_laplacian(r, eps, r1, r2):
    """Laplacian of :func:`sink_profile`; supported on ``r1 < r < r2``."""
    r = np.asarray(r, dtype=float)
    _, d1, d2 = cutoff(r, r1, r2)
    safe = np.where(r > 0, r, 1.0)
    L = np.log(safe / eps)
    return np.where((r > r1) & (r < r2), d2 * L + d1 * L / safe + 2.0 * d1 / safe, 0.0)


def sink_integral(eps, r1, r2):
    """Integral of the profile over the annulus ``eps < r < r2``."""
    inner = 2 * math.pi * (r1**2 / 2 * math.log(r1 / eps) - (r1**2 - eps**2) / 4)
    outer, _ = integrate.quad(lambda r: float(sink_profile(r, eps, r1, r2)) * r, r1, r2,
                              epsabs=1e-14, epsrel=1e-12)
    return inner + 2 * math.pi * outer


@dataclass(frozen=True)
class PointSinks:
    indices: tuple
    centers: np.ndarray
    radii: np.ndarray
    r2: np.ndarray

    @property
    def r1(self) -> np.ndarray:
        return 0.5 * self.r2

    def __len__(self):
        return len(self.indices)

    def profile(self, j, pts):
        r = np.linalg.norm(np.asarray(pts, dtype=float) - self.centers[j], axis=-1)
        return sink_profile(r, self.radii[j], self.r1[j], self.r2[j])

    def laplacian(self, j, pts):
        r = np.linalg.norm(np.asarray(pts, dtype=float) - self.centers[j], axis=-1)
        return sink_laplacian(r, self.radii[j], self.r1[j], self.r2[j])

    def integral(self, j):
        return sink_integral(self.radii[j], self.r1[j], self.r2[j])


def max_cutoff(domain, traps, t, k, h) -> float:
    """Largest admissible cutoff radius for point trap ``k``.

    The support must stay four grid spacings clear of the outer boundary and
    of resolved traps, and must not meet the support of another point trap.
    """
    centers = trap_centers(traps, t)
    c = centers[k]
    limit = math.inf
    gap = float(np.linalg.norm(domain.project(c)[0] - c))
    limit = min(limit, gap - 4.0 * h)
    for i, tr in enumerate(traps):
        if i == k:
            continue
        d = float(np.linalg.norm(centers[i] - c))
        if tr.radius < h:
            limit = min(limit, 0.45 * d)
        else:
            limit = min(limit, d - tr.radius - 4.0 * h)
    return limit


def make_point_sinks(band, cutoff_radius: float | None = None) -> PointSinks:
    idx = tuple(band.point_traps)
    centers = trap_centers(band.traps, band.t)[list(idx)] if idx else np.zeros((0, 2))
    radii = np.array([band.traps[k].radius for k in idx], dtype=float)
    r2 = []
    for k in idx:
        lim = max_cutoff(band.domain, band.traps, band.t, k, band.h)
        r = min(DEFAULT_CUTOFF, lim) if cutoff_radius is None else float(cutoff_radius)
        if r > lim + 1e-12:
            raise ValueError(f"cutoff {r} too large for trap {k} (limit {lim:.4g})")
        if r < 4.0 * band.h:
            raise TrapTooSmall(f"trap {k} is too close to another feature for a point-sink treatment")
        r2.append(r)
    return PointSinks(indices=idx, centers=centers, radii=radii, r2=np.array(r2, dtype=float))
