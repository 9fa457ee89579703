"""Finite-difference operators and penalised system matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .band import Band, ExtensionOps
from .errors import DimensionMismatch, StencilEscape

__all__ = [
    "LinearSystem",
    "laplacian_5pt",
    "gradient_ops",
    "rotation_velocity",
    "penalty",
    "assemble_parabolic",
    "assemble_rotating_elliptic",
    "upwind_switch",
]


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Semi-discrete system ``v_t = M v + rhs_const``.

    The steady problem is ``M v + rhs_const = 0``.
    """

    M: sp.csr_matrix
    rhs_const: np.ndarray
    h: float
    gamma_bar: float
    D: float = 1.0
    upwind: bool = False


def penalty(D: float, h: float) -> float:
    """Penalty coefficient ``4 D / h**2`` for two space dimensions."""
    return 4.0 * D / h**2


def _complete_rows(band: Band) -> tuple[np.ndarray, np.ndarray]:
    nb = band.neighbors()
    return nb, np.all(nb >= 0, axis=1)


def laplacian_5pt(band: Band) -> sp.csr_matrix:
    """Five-point Laplacian. Rows lacking a neighbour in the band are zero."""
    nb, full = _complete_rows(band)
    rows = np.flatnonzero(full)
    h2 = band.h**2
    r = np.concatenate([rows] * 5)
    c = np.concatenate([rows, nb[rows, 0], nb[rows, 1], nb[rows, 2], nb[rows, 3]])
    v = np.concatenate([np.full(len(rows), -4.0 / h2)] + [np.full(len(rows), 1.0 / h2)] * 4)
    return sp.csr_matrix((v, (r, c)), shape=(band.n, band.n))


def gradient_ops(band: Band, s1=None, s2=None):
    """First-derivative operators ``(Dx, Dy)``.

    Centred differences by default. When velocity components ``s1``/``s2``
    are given, each row uses the donor-cell one-sided difference for the
    advection term ``s . grad u``: a forward difference where the component
    is positive, backward where it is negative.
    """
    nb, full = _complete_rows(band)
    rows = np.flatnonzero(full)
    h = band.h
    mats = []
    for axis, s in ((0, s1), (1, s2)):
        plus, minus = nb[rows, 2 * axis], nb[rows, 2 * axis + 1]
        if s is None:
            r = np.concatenate([rows, rows])
            c = np.concatenate([plus, minus])
            v = np.concatenate([np.full(len(rows), 0.5 / h), np.full(len(rows), -0.5 / h)])
        else:
            sr = np.asarray(s)[rows]
            fwd = sr > 0
            lo = np.where(fwd, rows, minus)
            hi = np.where(fwd, plus, rows)
            r = np.concatenate([rows, rows])
            c = np.concatenate([hi, lo])
            v = np.concatenate([np.full(len(rows), 1.0 / h), np.full(len(rows), -1.0 / h)])
        mats.append(sp.csr_matrix((v, (r, c)), shape=(band.n, band.n)))
    return mats[0], mats[1]


def rotation_velocity(band: Band, omega: float):
    """Velocity of the rotating-frame advection term at the band points.

    The velocity is evaluated at the closest points, so it is constant along
    the normals outside the domain like every other extended quantity.

    In the frame co-rotating with a trap that moves counter-clockwise at
    angular speed ``omega`` the MFPT satisfies
    ``D lap U + omega (y U_x - x U_y) + 1 = 0``, so ``s = omega (y, -x)``.
    """
    x, y = band.cp[:, 0], band.cp[:, 1]
    return omega * y, -omega * x


def _check(band: Band, ext: ExtensionOps):
    n = band.n
    for name, m in (("E", ext.E), ("Ebar", ext.Ebar)):
        if m.shape != (n, n):
            raise DimensionMismatch(f"{name} has shape {m.shape}, band has {n} points")
    if ext.g.shape != (n,):
        raise DimensionMismatch(f"g has shape {ext.g.shape}, band has {n} points")


def _check_stencils(band: Band, ext: ExtensionOps):
    _, full = _complete_rows(band)
    used = np.unique(ext.Ebar.indices)
    if not np.all(full[used]):
        raise StencilEscape("closest-point stencil reaches a node without a full Laplacian stencil")


def assemble_parabolic(band: Band, ext: ExtensionOps, D: float = 1.0) -> LinearSystem:
    """``M = D Ebar L - gamma (I - E)`` and ``rhs = 1 + gamma g``."""
    _check(band, ext)
    _check_stencils(band, ext)
    gamma = penalty(D, band.h)
    L = laplacian_5pt(band)
    eye = sp.identity(band.n, format="csr")
    M = (D * (ext.Ebar @ L) - gamma * (eye - ext.E)).tocsr()
    M.eliminate_zeros()
    forcing = ext.forcing if ext.forcing is not None else np.ones(band.n)
    rhs = forcing + gamma * ext.g
    return LinearSystem(M=M, rhs_const=rhs, h=band.h, gamma_bar=gamma, D=D)


def upwind_switch(D: float, omega: float, h: float, radius: float = 1.0) -> bool:
    """True when the cell Peclet number ``omega radius h / (2 D)`` exceeds one."""
    return abs(omega) * radius * h / (2.0 * D) > 1.0


def assemble_rotating_elliptic(band: Band, ext: ExtensionOps, D: float, omega: float,
                               upwind: bool | None = None) -> LinearSystem:
    """Penalised operator plus the rotating-frame advection term.

    The advection ``S1 Dx + S2 Dy`` acts on the band values directly, with
    the velocity extended from the closest points. ``upwind=None`` picks
    donor-cell differences automatically from :func:`upwind_switch`.
    """
    base = assemble_parabolic(band, ext, D)
    if upwind is None:
        upwind = upwind_switch(D, omega, band.h, band.domain.circumradius)
    s1, s2 = rotation_velocity(band, omega)
    if upwind:
        Dx, Dy = gradient_ops(band, s1, s2)
    else:
        Dx, Dy = gradient_ops(band)
    adv = sp.diags(s1) @ Dx + sp.diags(s2) @ Dy
    M = (base.M + adv).tocsr()
    M.eliminate_zeros()
    return LinearSystem(M=M, rhs_const=base.rhs_const, h=band.h, gamma_bar=base.gamma_bar,
                        D=D, upwind=bool(upwind))
