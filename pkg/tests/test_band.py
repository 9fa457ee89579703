from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from mfpt.band import (KIND_DEEP, KIND_DIRICHLET, KIND_INTERIOR, KIND_NEUMANN, BoundaryData,
                       build_band, build_extension_ops, interp_matrix, interp_row, validate_traps)
from mfpt.errors import StencilEscape, TrapTooSmall
from mfpt.geometry import Disk, Ellipse, RingOrbitTrap, Star, StationaryTrap


def test_disk_classification_without_traps():
    band = build_band(Disk(1.0), (), 0.0, 0.1)
    r = np.hypot(band.xy[:, 0], band.xy[:, 1])
    assert np.all(band.kind[r <= 1.0] == KIND_INTERIOR)
    assert np.all(band.kind[r > 1.0] == KIND_NEUMANN)
    x0, x1, y0, y1 = Disk(1.0).bbox()
    assert band.xy[:, 0].min() <= x0 - 4 * 0.1 + 1e-12 + 0.1
    assert band.xy[:, 0].max() >= x1 + 4 * 0.1 - 0.1 - 1e-12
    assert band.xy[:, 1].min() <= y0 - 4 * 0.1 + 0.1 + 1e-12


def test_grid_covers_padded_bounding_box():
    h = 0.05
    dom = Star(0.2, 3)
    band = build_band(dom, (), 0.0, h)
    x0, x1, y0, y1 = dom.bbox()
    ox, oy = band.origin
    nx, ny = band.dims
    assert ox <= x0 - 4 * h and ox + (nx - 1) * h >= x1 + 4 * h
    assert oy <= y0 - 4 * h and oy + (ny - 1) * h >= y1 + 4 * h
    # every node within the collar of the domain is active
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    P = np.column_stack([ox + I.ravel() * h, oy + J.ravel() * h])
    from mfpt.geometry import closest_points
    _, dist, _ = closest_points(dom, (), 0.0, P)
    near = dist <= 4 * h * (1 - 1e-9)
    assert np.all(band.index.ravel()[near] >= 0)


def test_points_inside_small_trap_are_ghost_or_deep():
    eps = 0.05
    band = build_band(Disk(1.0), (StationaryTrap((0.0, 0.0), eps),), 0.0, 0.004)
    r = np.hypot(band.xy[:, 0], band.xy[:, 1])
    assert set(np.unique(band.kind[r < eps])) <= {KIND_DIRICHLET, KIND_DEEP}
    assert np.any(band.kind[r < eps] == KIND_DEEP)


def test_interior_laplacian_stencils_lie_in_band():
    band = build_band(Ellipse(1.25, 0.8), (StationaryTrap((0.3, 0.1), 0.1),), 0.0, 0.02)
    nb = band.neighbors()
    assert np.all(nb[band.kind == KIND_INTERIOR] >= 0)


def test_ghost_mirror_stencils_lie_in_band():
    band = build_band(Star(0.2, 3), (StationaryTrap((0.5, 0.0), 0.08),), 0.0, 0.02)
    ghosts = (band.kind == KIND_NEUMANN) | (band.kind == KIND_DIRICHLET)
    interp_matrix(band, band.mirror[ghosts])


def test_trap_too_small_raises():
    with pytest.raises(TrapTooSmall):
        build_band(Disk(1.0), (StationaryTrap((0.0, 0.0), 0.005),), 0.0, 0.01)


def test_subgrid_point_mode_records_point_traps():
    band = build_band(Disk(1.0), (StationaryTrap((0.4, 0.0), 0.003),), 0.0, 0.01, subgrid="point")
    assert band.point_traps == (0,)
    assert np.all(band.kind[np.hypot(band.xy[:, 0] - 0.4, band.xy[:, 1]) < 0.003] == KIND_INTERIOR)


def test_coarse_trap_warns():
    with pytest.warns(RuntimeWarning, match="trap 0"):
        build_band(Disk(1.0), (StationaryTrap((0.0, 0.0), 0.03),), 0.0, 0.02)


@pytest.mark.parametrize("traps, k", [
    ((StationaryTrap((0.0, 0.0), 0.1), StationaryTrap((1.2, 0.0), 0.05)), 1),
    ((StationaryTrap((0.97, 0.0), 0.05),), 0),
])
def test_validate_traps_names_offender(traps, k):
    with pytest.raises(ValueError, match=f"trap {k}"):
        validate_traps(Disk(1.0), traps)


def test_validate_traps_overlap():
    with pytest.raises(ValueError, match="traps 0 and 1 overlap"):
        validate_traps(Disk(1.0), (StationaryTrap((0.0, 0.0), 0.1), StationaryTrap((0.15, 0.0), 0.1)))


def test_periodic_trap_classification_repeats():
    tr = RingOrbitTrap(r0=0.5, radius=0.1, omega=3.0)
    a = build_band(Disk(1.0), (tr,), 0.3, 0.02)
    b = build_band(Disk(1.0), (tr,), 0.3 + tr.period, 0.02)
    assert np.array_equal(a.kind, b.kind)


# interpolation

def _band():
    return build_band(Disk(1.0), (), 0.0, 0.05)


def _central_node(band):
    return int(np.argmin(np.hypot(band.xy[:, 0] - 0.1, band.xy[:, 1] - 0.1)))


def test_interp_at_node_is_unit_row():
    band = _band()
    k = _central_node(band)
    row = interp_row(band, band.xy[k])
    assert row.nnz == 1
    assert row.data[0] == pytest.approx(1.0)
    assert row.indices[0] == k


def test_interp_at_cell_centre_symmetric():
    band = _band()
    p = band.xy[_central_node(band)] + band.h / 2
    row = interp_row(band, p).toarray().ravel()
    w = np.sort(row[row != 0])
    assert row.sum() == pytest.approx(1.0, abs=1e-13)
    # corner, edge and centre weights come in groups of 4, 8, 4
    assert np.allclose(w[:8], w[0]) and np.allclose(w[-4:], w[-1])


@given(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7))
def test_interp_partition_of_unity(x, y):
    row = interp_row(_band(), (x, y))
    assert row.sum() == pytest.approx(1.0, abs=1e-13)
    assert row.nnz <= 16


def test_interp_reproduces_cubics():
    band = _band()
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.7, 0.7, size=(100, 2))
    f = band.xy[:, 0] ** 3 * band.xy[:, 1] ** 2
    got = interp_matrix(band, pts) @ f
    assert np.allclose(got, pts[:, 0] ** 3 * pts[:, 1] ** 2, atol=1e-12)


def test_interp_outside_band_raises():
    with pytest.raises(StencilEscape):
        interp_row(_band(), (1.3, 0.0))


# extension operators

def _trap_band(h=0.02):
    return build_band(Disk(1.0), (StationaryTrap((0.2, -0.1), 0.15),), 0.0, h)


def test_homogeneous_extension_has_zero_g():
    ext = build_extension_ops(_trap_band())
    assert np.all(ext.g == 0.0)


def test_interior_rows_are_identity():
    band = _trap_band()
    ext = build_extension_ops(band)
    idx = np.flatnonzero(band.kind == KIND_INTERIOR)
    sub = ext.E[idx][:, idx]
    assert (sub - sp.identity(len(idx))).count_nonzero() == 0
    assert abs(ext.Ebar[idx] - ext.E[idx]).max() == 0.0


def test_extension_rows_sum_and_signs():
    band = _trap_band()
    ext = build_extension_ops(band)
    sums = np.asarray(ext.E.sum(axis=1)).ravel()
    assert np.allclose(sums[band.kind == KIND_NEUMANN], 1.0, atol=1e-13)
    assert np.allclose(sums[band.kind == KIND_DIRICHLET], -1.0, atol=1e-13)
    assert np.all(sums[band.kind == KIND_DEEP] == 0.0)
    nnz = np.diff(ext.E.indptr)
    assert nnz.max() <= 16
    bsums = np.asarray(ext.Ebar.sum(axis=1)).ravel()
    live = band.kind != KIND_DEEP
    assert np.allclose(bsums[live], 1.0, atol=1e-13)


def test_constant_reproduced_with_neumann_only():
    band = build_band(Disk(1.0), (), 0.0, 0.02)
    ext = build_extension_ops(band)
    c = np.full(band.n, 2.5)
    assert np.allclose(ext.E @ c, c, atol=1e-12)


def test_constant_flips_sign_on_dirichlet_ghosts():
    band = _trap_band()
    ext = build_extension_ops(band)
    v = ext.E @ np.full(band.n, 3.0)
    assert np.allclose(v[band.kind == KIND_DIRICHLET], -3.0, atol=1e-12)


C, EPS = np.array([0.2, -0.1]), 0.15


def _u(p):
    return np.cos(p[:, 0]) * np.sin(p[:, 1])


def _g1(p):
    # outward normal derivative on the unit circle
    ux = -np.sin(p[:, 0]) * np.sin(p[:, 1])
    uy = np.cos(p[:, 0]) * np.cos(p[:, 1])
    return ux * p[:, 0] + uy * p[:, 1]


def _extension_error(h):
    band = build_band(Disk(1.0), (StationaryTrap(tuple(C), EPS),), 0.0, h)
    ext = build_extension_ops(band, BoundaryData(g1=_g1, g2=_u))
    exact = _u(band.xy)
    return band, np.abs(ext.E @ exact + ext.g - exact)


def test_neumann_extension_third_order():
    hs = [0.04, 0.02, 0.01]
    errs = []
    for h in hs:
        band, err = _extension_error(h)
        errs.append(err[band.kind == KIND_NEUMANN].max())
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope > 2.7


@pytest.mark.parametrize("h", [0.04, 0.02, 0.01])
def test_dirichlet_extension_error_is_quadratic_in_depth(h):
    # odd reflection leaves s^2 u_nn at depth s; |u_nn| <= 1 for cos x sin y
    band, err = _extension_error(h)
    m = band.kind == KIND_DIRICHLET
    s = EPS - np.linalg.norm(band.xy[m] - C, axis=1)
    assert np.all(err[m] <= s**2 + 1e-6)


def test_deep_rows_are_zero_constraints():
    band = build_band(Disk(1.0), (StationaryTrap((0.0, 0.0), 0.3),), 0.0, 0.02)
    ext = build_extension_ops(band)
    deep = band.kind == KIND_DEEP
    assert deep.any()
    assert ext.E[np.flatnonzero(deep)].count_nonzero() == 0
    assert np.all(ext.forcing[deep] == 0.0)
