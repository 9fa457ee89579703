"""Area weights for integrating grid fields over the trap-free domain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotConverged
from .geometry import Rectangle, trap_centers

__all__ = [
    "QuadratureWeights",
    "smoothed_indicator",
    "build_weights",
    "trap_weights",
    "average",
    "average_periodic",
]


def smoothed_indicator(s):
    """One-sided regularised indicator of ``s > 0``.

    Zero for ``s <= 0``, one for ``s >= 2`` and piecewise linear in between,
    rising with slope 3/2 on ``[0, 1]`` and falling with slope -1/2 on
    ``[1, 2]``. Its derivative is a combination of two unit boxes, so grid
    sums of the indicator are shift invariant, and its first moment matches
    the sharp indicator. Both properties are needed for second order.
    """
    s = np.asarray(s, dtype=float)
    return np.where(s <= 0.0, 0.0, np.where(s < 1.0, 1.5 * s, np.where(s < 2.0, 2.0 - 0.5 * s, 1.0)))


@dataclass(frozen=True, eq=False)
class QuadratureWeights:
    w: np.ndarray
    variant: str

    @property
    def area(self) -> float:
        return float(np.sum(self.w))

    def __len__(self):
        return len(self.w)


def _width_scale(normal):
    # stretch the smoothing width along oblique boundaries; a zero normal
    # only occurs far from the boundary, where any scale will do
    s = np.abs(normal[:, 0]) + np.abs(normal[:, 1])
    return np.where(s > 0, s, 1.0)


def _trap_indicator(band, center, radius):
    d = band.xy - np.asarray(center, dtype=float)
    r = np.hypot(d[:, 0], d[:, 1])
    rr = np.where(r > 0, r, 1.0)
    return smoothed_indicator((r - radius) / (band.h * _width_scale(d / rr[:, None])))


def build_weights(band, variant: str = "modified") -> QuadratureWeights:
    """Quadrature weights for every band point.

    ``"trivial"`` gives ``h**2`` to points of the trap-free domain and zero
    elsewhere. ``"modified"`` applies :func:`smoothed_indicator` to the signed
    distance of each boundary feature scaled by ``h (|n_x| + |n_y|)`` and
    multiplies the results; weights vanish outside the domain and inside
    traps and differ from ``h**2`` only within a few grid spacings of a
    boundary. Traps the band treats as point sinks are ignored.
    """
    centers = trap_centers(band.traps, band.t)
    h = band.h
    if variant == "trivial":
        inside = band.phi_outer >= 0.0
        for k in band.resolved_traps:
            inside &= np.hypot(*(band.xy - centers[k]).T) >= band.traps[k].radius
        w = np.where(inside, h * h, 0.0)
    elif variant == "modified":
        if isinstance(band.domain, Rectangle):
            # the separable indicator is exact on a box, corners included
            dom = band.domain
            x, y = band.xy[:, 0], band.xy[:, 1]
            ind = smoothed_indicator((dom.a0 - np.abs(x)) / h) * smoothed_indicator((dom.b0 - np.abs(y)) / h)
        else:
            ind = smoothed_indicator(band.phi_outer / (h * _width_scale(band.outer_normal)))
        for k in band.resolved_traps:
            ind = ind * _trap_indicator(band, centers[k], band.traps[k].radius)
        w = h * h * ind
    else:
        raise ValueError(f"unknown quadrature variant {variant!r}")
    return QuadratureWeights(w=w, variant=variant)


def trap_weights(band, base: np.ndarray, center, radius: float, variant: str = "modified"):
    """Weights with one extra trap carved out of ``base``.

    Returns the affected band positions and their new weights. Indicators of
    separate features multiply; the regularised indicator overshoots one near
    a boundary, so taking the minimum instead would clip that overshoot.
    """
    h = band.h
    c = np.asarray(center, dtype=float)
    reach = radius + 2.0 * np.sqrt(2.0) * h
    lo = np.maximum(np.floor((c - reach - np.asarray(band.origin)) / h).astype(int), 0)
    hi = np.minimum(np.ceil((c + reach - np.asarray(band.origin)) / h).astype(int), np.asarray(band.dims) - 1)
    sub = band.index[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1].ravel()
    sub = sub[sub >= 0]
    d = band.xy[sub] - c
    r = np.hypot(d[:, 0], d[:, 1])
    phi = r - radius
    if variant == "trivial":
        wk = np.where(phi >= 0.0, h * h, 0.0)
    else:
        rr = np.where(r > 0, r, 1.0)
        scale = (np.abs(d[:, 0]) + np.abs(d[:, 1])) / rr
        scale = np.where(r > 0, scale, 1.0)
        wk = h * h * smoothed_indicator(phi / (h * scale))
    return sub, base[sub] * wk / (h * h)


def _values(field):
    return np.asarray(getattr(field, "values", field), dtype=float)


def average(field, weights) -> float:
    """Weighted mean ``sum(w v) / sum(w)``."""
    v = _values(field)
    w = np.asarray(getattr(weights, "w", weights), dtype=float)
    if v.shape != w.shape:
        raise DimensionMismatch(f"field has shape {v.shape}, weights {w.shape}")
    return float(np.dot(w, v) / np.sum(w))


def average_periodic(sol, area_mode: str = "instantaneous") -> float:
    """Time average over one period of a periodic solution.

    Uses the trapezoid rule on the per-step integrals stored in ``sol``. With
    ``area_mode="instantaneous"`` every step is normalised by its own
    trap-free area before averaging in time; ``"mean"`` divides the
    space-time integral by the period-averaged area instead.
    """
    if not getattr(sol, "converged", True):
        raise NotConverged("periodic solution did not reach the requested tolerance")
    num = np.asarray(sol.integrals, dtype=float)
    area = np.asarray(sol.areas, dtype=float)
    if len(num) == 1:
        return float(num[0] / area[0])
    if area_mode == "instantaneous":
        return float(_trapezoid_mean(num / area))
    if area_mode == "mean":
        return float(_trapezoid_mean(num) / _trapezoid_mean(area))
    raise ValueError(f"unknown area mode {area_mode!r}")


def _trapezoid_mean(y):
    y = np.asarray(y, dtype=float)
    return np.trapezoid(y) / (len(y) - 1) if hasattr(np, "trapezoid") else np.trapz(y) / (len(y) - 1)
