"""Embedding grid, point classification and closest-point extension operators."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import StencilEscape, TrapTooSmall
from .geometry import INTERIOR, OUTER, closest_points, project_to_trap, trap_centers

__all__ = [
    "Band",
    "BoundaryData",
    "ExtensionOps",
    "build_band",
    "interp_weights",
    "interp_matrix",
    "interp_row",
    "build_extension_ops",
    "classify_trap_deep_rows",
    "trap_rows",
    "validate_traps",
    "KIND_INTERIOR",
    "KIND_NEUMANN",
    "KIND_DIRICHLET",
    "KIND_DEEP",
]

KIND_INTERIOR = 0
KIND_NEUMANN = 1
KIND_DIRICHLET = 2
KIND_DEEP = 3
KIND_NAMES = ("interior", "neumann_ghost", "dirichlet_ghost", "trap_deep")

# collar and trap-ghost depth, in grid spacings
COLLAR = 4.0
PAD = 5


@dataclass(frozen=True, eq=False)
class Band:
    """Active grid points of the embedding grid and their closest-point data.

    Attributes
    ----------
    h : float
        Grid spacing.
    origin : tuple
        Coordinates of grid node ``(0, 0)``.
    dims : tuple
        Number of nodes along x and y.
    ij : ndarray (n, 2)
        Grid indices of the active points.
    xy : ndarray (n, 2)
        Coordinates of the active points.
    index : ndarray (nx, ny)
        Map from grid indices to band position, -1 for inactive nodes.
    kind : ndarray (n,)
        Point class, one of the ``KIND_*`` codes.
    cp, mirror : ndarray (n, 2)
        Closest point and mirror point. Interior points are their own.
    region : ndarray (n,)
        ``INTERIOR``, ``OUTER`` or the trap index owning the closest point.
    phi_outer : ndarray (n,)
        Signed distance to the outer boundary, positive inside. Exact within
        a few grid spacings of the boundary.
    outer_normal : ndarray (n, 2)
        Unit normal of the outer boundary at the foot point, for points
        within a few grid spacings of it (sign is not meaningful).
    point_traps : tuple
        Indices of traps too small for the grid, handled by the solver as
        singular point sinks.
    """

    h: float
    origin: tuple
    dims: tuple
    ij: np.ndarray
    xy: np.ndarray
    index: np.ndarray
    kind: np.ndarray
    cp: np.ndarray
    mirror: np.ndarray
    region: np.ndarray
    phi_outer: np.ndarray
    outer_normal: np.ndarray
    domain: object
    traps: tuple
    t: float
    point_traps: tuple = ()

    @property
    def n(self) -> int:
        return len(self.xy)

    @property
    def resolved_traps(self) -> tuple:
        return tuple(k for k in range(len(self.traps)) if k not in self.point_traps)

    def mask(self, kind: int) -> np.ndarray:
        return self.kind == kind

    def counts(self) -> dict:
        return {name: int(np.sum(self.kind == k)) for k, name in enumerate(KIND_NAMES)}

    def neighbors(self) -> np.ndarray:
        """Band positions of the E, W, N, S neighbours, -1 when inactive."""
        nx, ny = self.dims
        i, j = self.ij[:, 0], self.ij[:, 1]
        out = np.full((self.n, 4), -1, dtype=np.int64)
        for c, (di, dj) in enumerate(((1, 0), (-1, 0), (0, 1), (0, -1))):
            ii, jj = i + di, j + dj
            ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
            out[ok, c] = self.index[ii[ok], jj[ok]]
        return out


def validate_traps(domain, traps, t=0.0, h=None):
    """Raise ``ValueError`` naming the first trap that leaves the domain or overlaps another."""
    centers = trap_centers(traps, t)
    for k, tr in enumerate(traps):
        c = centers[k]
        if not domain.contains(c)[0]:
            raise ValueError(f"trap {k} centre lies outside the domain")
        gap = np.linalg.norm(domain.project(c)[0] - c)
        if gap <= tr.radius:
            raise ValueError(f"trap {k} touches or crosses the outer boundary")
        for j in range(k):
            if np.linalg.norm(c - centers[j]) <= tr.radius + traps[j].radius:
                raise ValueError(f"traps {j} and {k} overlap")


def _unit(v):
    nrm = np.linalg.norm(v, axis=1)
    out = np.zeros_like(v)
    ok = nrm > 0
    out[ok] = v[ok] / nrm[ok, None]
    out[~ok, 0] = 1.0
    return out


def build_band(domain, traps: Sequence = (), t: float = 0.0, h: float = 0.01, *,
               subgrid: str = "raise", validate: bool = True, shift=(0.5, 0.5)) -> Band:
    """Build the computational band for ``domain`` with ``traps`` at time ``t``.

    Parameters
    ----------
    subgrid : {"raise", "point"}
        What to do with traps whose diameter spans fewer than two cells.
        ``"raise"`` raises :class:`TrapTooSmall`; ``"point"`` leaves them out of
        the grid classification so the solver can treat them as point sinks.
    shift : pair of float
        Offset of the grid nodes in units of ``h``; nodes sit at
        ``((i + shift[0]) h, (j + shift[1]) h)``. The default cell-centred
        layout keeps the grid symmetric about the origin without placing a
        node at the origin or at trap centres on the h-lattice.
    """
    traps = tuple(traps)
    if validate:
        validate_traps(domain, traps, t, h)
    point = []
    for k, tr in enumerate(traps):
        if 2.0 * tr.radius < 2.0 * h:
            if subgrid == "point":
                point.append(k)
                continue
            raise TrapTooSmall(f"trap {k} radius {tr.radius} is below the grid spacing {h}")
        if 2.0 * tr.radius < 4.0 * h:
            warnings.warn(f"trap {k} diameter spans fewer than four grid cells", RuntimeWarning, stacklevel=2)
    resolved = [k for k in range(len(traps)) if k not in point]

    xmin, xmax, ymin, ymax = domain.bbox()
    sx, sy = float(shift[0]), float(shift[1])
    i0 = math.floor(xmin / h - sx) - PAD
    i1 = math.ceil(xmax / h - sx) + PAD
    j0 = math.floor(ymin / h - sy) - PAD
    j1 = math.ceil(ymax / h - sy) + PAD
    nx, ny = i1 - i0 + 1, j1 - j0 + 1
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I = I.ravel()
    J = J.ravel()
    P = np.column_stack([(I + i0 + sx) * h, (J + j0 + sy) * h])

    inside = domain.contains(P)
    near = domain.approx_distance(P) <= 6.0 * h
    keep = inside | near
    # drop exterior nodes that are obviously far before projecting exactly
    P, I, J, inside = P[keep], I[keep], J[keep], inside[keep]

    sub_traps = [traps[k] for k in resolved]
    cp, dist, region = closest_points(domain, sub_traps, t, P)
    region = np.where(region >= 0, np.array(resolved + [0])[np.maximum(region, 0)], region)

    active = (region != OUTER) | (dist <= COLLAR * h * (1 + 1e-12))
    P, I, J, cp, dist, region = P[active], I[active], J[active], cp[active], dist[active], region[active]

    kind = np.full(len(P), KIND_INTERIOR, dtype=np.int8)
    kind[region == OUTER] = KIND_NEUMANN
    intrap = region >= 0
    kind[intrap] = KIND_DIRICHLET
    kind[intrap & (dist > COLLAR * h)] = KIND_DEEP

    phi = np.empty(len(P))
    normal = np.zeros((len(P), 2))
    normal[:, 0] = 1.0
    outer = region == OUTER
    phi[outer] = -dist[outer]
    rest = ~outer
    approx = domain.approx_distance(P[rest])
    exact_needed = approx <= 6.0 * h
    vals = approx.copy()
    sel = np.flatnonzero(rest)[exact_needed]
    if len(sel):
        foot = domain.project(P[sel])
        vals[exact_needed] = np.linalg.norm(P[sel] - foot, axis=1)
        normal[sel] = _unit(foot - P[sel])
    phi[rest] = vals
    normal[outer] = _unit(P[outer] - cp[outer])

    index = np.full((nx, ny), -1, dtype=np.int64)
    index[I, J] = np.arange(len(P))
    mirror = 2.0 * cp - P
    return Band(
        h=float(h), origin=((i0 + sx) * h, (j0 + sy) * h), dims=(nx, ny), ij=np.column_stack([I, J]),
        xy=P, index=index, kind=kind, cp=cp, mirror=mirror, region=region,
        phi_outer=phi, outer_normal=normal, domain=domain, traps=traps, t=float(t), point_traps=tuple(point),
    )


def _lagrange_1d(f):
    """Cubic Lagrange weights on nodes -1, 0, 1, 2 evaluated at ``f``."""
    return np.stack([
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    ], axis=-1)


def interp_weights(band: Band, pts):
    """Bicubic interpolation stencils for query points.

    Returns band positions and weights, each of shape ``(n, 16)``. The stencil
    is the 4x4 block of nodes whose central cell contains the point.

    Raises
    ------
    StencilEscape
        If any stencil node is not in the band.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    s = (pts - np.asarray(band.origin)) / band.h
    base = np.floor(s)
    f = s - base
    snap = np.abs(f - np.round(f)) < 1e-10
    f = np.where(snap, np.round(f), f)
    base = base + (f >= 1.0)
    f = np.where(f >= 1.0, 0.0, f)
    base = base.astype(np.int64)
    wx = _lagrange_1d(f[:, 0])
    wy = _lagrange_1d(f[:, 1])
    offs = np.arange(-1, 3)
    gi = base[:, 0:1, None] + offs[None, :, None]
    gj = base[:, 1:2, None] + offs[None, None, :]
    gi, gj = np.broadcast_arrays(gi, gj)
    nx, ny = band.dims
    ok = (gi >= 0) & (gi < nx) & (gj >= 0) & (gj < ny)
    cols = np.full(gi.shape, -1, dtype=np.int64)
    cols[ok] = band.index[gi[ok], gj[ok]]
    if np.any(cols < 0):
        bad = np.flatnonzero(np.any(cols.reshape(len(pts), -1) < 0, axis=1))
        raise StencilEscape(f"interpolation stencil leaves the band at {pts[bad[0]].tolist()}")
    w = wx[:, :, None] * wy[:, None, :]
    return cols.reshape(len(pts), 16), w.reshape(len(pts), 16)


def interp_matrix(band: Band, pts) -> sp.csr_matrix:
    cols, w = interp_weights(band, pts)
    n = len(cols)
    rows = np.repeat(np.arange(n), 16)
    m = sp.csr_matrix((w.ravel(), (rows, cols.ravel())), shape=(n, band.n))
    m.eliminate_zeros()
    return m


def interp_row(band: Band, p) -> sp.csr_matrix:
    """Single interpolation row (1 x n sparse) for the point ``p``."""
    return interp_matrix(band, np.asarray(p, dtype=float).reshape(1, 2))


@dataclass(frozen=True)
class BoundaryData:
    """Boundary data evaluated at closest points.

    ``g1`` is the outward normal flux on the outer boundary, ``g2`` the value
    on trap circles. ``None`` means homogeneous.
    """

    g1: Optional[Callable[[np.ndarray], np.ndarray]] = None
    g2: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True, eq=False)
class ExtensionOps:
    E: sp.csr_matrix
    Ebar: sp.csr_matrix
    g: np.ndarray
    # rows whose PDE forcing is switched off (deep trap constraints)
    forcing: np.ndarray = field(default=None)


def _sparse_rows(n_rows, n_cols, rows, cols, vals):
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))


def build_extension_ops(band: Band, bc: BoundaryData | None = None) -> ExtensionOps:
    """Assemble the boundary-aware and plain closest-point extensions."""
    bc = bc or BoundaryData()
    n = band.n
    g = np.zeros(n)
    r_e, c_e, v_e = [], [], []
    r_b, c_b, v_b = [], [], []

    interior = np.flatnonzero(band.kind == KIND_INTERIOR)
    r_e.append(interior); c_e.append(interior); v_e.append(np.ones(len(interior)))
    r_b.append(interior); c_b.append(interior); v_b.append(np.ones(len(interior)))

    for kind, sign in ((KIND_NEUMANN, 1.0), (KIND_DIRICHLET, -1.0)):
        rows = np.flatnonzero(band.kind == kind)
        if len(rows) == 0:
            continue
        cols, w = interp_weights(band, band.mirror[rows])
        r_e.append(np.repeat(rows, 16)); c_e.append(cols.ravel()); v_e.append(sign * w.ravel())
        cols, w = interp_weights(band, band.cp[rows])
        r_b.append(np.repeat(rows, 16)); c_b.append(cols.ravel()); v_b.append(w.ravel())
        cp = band.cp[rows]
        if kind == KIND_NEUMANN and bc.g1 is not None:
            dist = np.linalg.norm(band.xy[rows] - band.mirror[rows], axis=1)
            g[rows] = dist * np.asarray(bc.g1(cp), dtype=float)
        elif kind == KIND_DIRICHLET and bc.g2 is not None:
            g[rows] = 2.0 * np.asarray(bc.g2(cp), dtype=float)

    E = _sparse_rows(n, n, np.concatenate(r_e), np.concatenate(c_e), np.concatenate(v_e))
    Ebar = _sparse_rows(n, n, np.concatenate(r_b), np.concatenate(c_b), np.concatenate(v_b))
    E.eliminate_zeros()
    Ebar.eliminate_zeros()
    ext = ExtensionOps(E=E, Ebar=Ebar, g=g, forcing=np.ones(n))
    return classify_trap_deep_rows(band, ext, bc)


def classify_trap_deep_rows(band: Band, ext: ExtensionOps, bc: BoundaryData | None = None) -> ExtensionOps:
    """Turn deep trap rows into hard constraints ``v = g2(cp)``.

    Their extension rows are zero, their plain extension rows are zero and
    their PDE forcing is switched off, so the steady equation reads
    ``-gamma (v - g2) = 0`` there.
    """
    bc = bc or BoundaryData()
    deep = np.flatnonzero(band.kind == KIND_DEEP)
    if len(deep) == 0:
        return ext
    keep = np.ones(band.n)
    keep[deep] = 0.0
    D = sp.diags(keep)
    g = ext.g.copy()
    g[deep] = 0.0 if bc.g2 is None else np.asarray(bc.g2(band.cp[deep]), dtype=float)
    forcing = ext.forcing.copy() if ext.forcing is not None else np.ones(band.n)
    forcing[deep] = 0.0
    return replace(ext, E=(D @ ext.E).tocsr(), Ebar=(D @ ext.Ebar).tocsr(), g=g, forcing=forcing)


def trap_rows(band: Band, center, radius: float):
    """Extension data for a trap placed on an existing band.

    Used when a moving trap sweeps over the fixed point set. Returns a dict
    with the affected band positions, their kinds, and the interpolation
    stencils of mirror points and closest points.
    """
    h = band.h
    c = np.asarray(center, dtype=float)
    lo = np.floor((c - radius - np.asarray(band.origin)) / h).astype(int) - 1
    hi = np.ceil((c + radius - np.asarray(band.origin)) / h).astype(int) + 1
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.asarray(band.dims) - 1)
    sub = band.index[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1].ravel()
    sub = sub[sub >= 0]
    d = np.linalg.norm(band.xy[sub] - c, axis=1)
    rows = sub[d < radius]
    d = d[d < radius]
    kinds = np.where(radius - d > COLLAR * h, KIND_DEEP, KIND_DIRICHLET).astype(np.int8)
    cp = project_to_trap(band.xy[rows], c, radius) if len(rows) else np.zeros((0, 2))
    ghost = kinds == KIND_DIRICHLET
    mirror = 2.0 * cp - band.xy[rows]
    if np.any(ghost):
        mcols, mw = interp_weights(band, mirror[ghost])
        ccols, cw = interp_weights(band, cp[ghost])
    else:
        mcols = ccols = np.zeros((0, 16), dtype=np.int64)
        mw = cw = np.zeros((0, 16))
    return {
        "rows": rows, "kind": kinds, "cp": cp, "ghost": ghost,
        "mirror_cols": mcols, "mirror_w": mw, "cp_cols": ccols, "cp_w": cw,
    }
