from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from mfpt.band import KIND_INTERIOR, build_band, build_extension_ops
from mfpt.errors import DimensionMismatch
from mfpt.geometry import Disk, Ellipse, StationaryTrap
from mfpt.operators import (assemble_parabolic, assemble_rotating_elliptic, gradient_ops, laplacian_5pt,
                            penalty, rotation_velocity, upwind_switch)
from mfpt.solver import solve_linear


def _setup(h=0.02, traps=(StationaryTrap((0.3, 0.2), 0.1),)):
    band = build_band(Disk(1.0), traps, 0.0, h)
    return band, build_extension_ops(band)


def _full_rows(band):
    return np.all(band.neighbors() >= 0, axis=1)


def test_laplacian_of_constant_vanishes():
    band, _ = _setup()
    assert np.allclose(laplacian_5pt(band) @ np.ones(band.n), 0.0)


def test_laplacian_exact_for_quadratics():
    band, _ = _setup()
    f = band.xy[:, 0] ** 2 + band.xy[:, 1] ** 2
    lap = laplacian_5pt(band) @ f
    inner = band.kind == KIND_INTERIOR
    assert np.allclose(lap[inner], 4.0, atol=1e-10)


def test_laplacian_truncation_second_order():
    errs = []
    for h in (0.04, 0.02):
        band, _ = _setup(h, ())
        x, y = band.xy[:, 0], band.xy[:, 1]
        f = np.sin(x) * np.cos(y)
        lap = laplacian_5pt(band) @ f
        m = band.kind == KIND_INTERIOR
        errs.append(np.max(np.abs(lap[m] + 2 * f[m])))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.1)


def test_parabolic_rhs_and_penalty():
    band, ext = _setup()
    sys = assemble_parabolic(band, ext, D=1.0)
    live = ext.forcing > 0
    assert np.all(sys.rhs_const[live] == 1.0)
    assert sys.gamma_bar == pytest.approx(4.0 / band.h**2)
    sys2 = assemble_parabolic(band, ext, D=2.0)
    assert sys2.gamma_bar == pytest.approx(2 * sys.gamma_bar)
    assert penalty(1.0, 0.1) == pytest.approx(400.0)


def test_parabolic_matrix_row_lengths():
    band, ext = _setup()
    M = assemble_parabolic(band, ext).M
    nnz = np.diff(M.indptr)
    assert nnz[band.kind == KIND_INTERIOR].max() <= 5
    # ghost rows: Ebar L spans a 6x6 block without corners, E adds a 4x4 block
    assert nnz.max() <= 32 + 16 + 1


def test_pure_neumann_rows_conserve_constants():
    band = build_band(Ellipse(1.25, 0.8), (), 0.0, 0.02)
    ext = build_extension_ops(band)
    M = assemble_parabolic(band, ext).M
    r = M @ np.ones(band.n)
    assert np.max(np.abs(r[band.kind == KIND_INTERIOR])) < 1e-10
    assert np.max(np.abs(r)) < 1e-8 * penalty(1.0, 0.02)


def test_dimension_mismatch():
    band, ext = _setup()
    other, ext2 = _setup(0.04)
    with pytest.raises(DimensionMismatch):
        assemble_parabolic(band, ext2)


def test_rotating_with_zero_omega_equals_parabolic():
    band, ext = _setup()
    a = assemble_parabolic(band, ext).M
    b = assemble_rotating_elliptic(band, ext, 1.0, 0.0).M
    a, b = a.sorted_indices(), b.sorted_indices()
    assert np.array_equal(a.indices, b.indices) and np.array_equal(a.indptr, b.indptr)
    assert np.array_equal(a.data, b.data)


@pytest.mark.parametrize("upwind", [False, True])
def test_advection_kills_constants(upwind):
    band, ext = _setup()
    s1, s2 = rotation_velocity(band, 7.0)
    Dx, Dy = gradient_ops(band, s1, s2) if upwind else gradient_ops(band)
    adv = sp.diags(s1) @ Dx + sp.diags(s2) @ Dy
    assert np.allclose(adv @ np.full(band.n, 3.0), 0.0, atol=1e-10)


def test_centred_gradient_exact_for_linear():
    band, _ = _setup()
    Dx, Dy = gradient_ops(band)
    full = _full_rows(band)
    f = 2.0 * band.xy[:, 0] - 3.0 * band.xy[:, 1]
    assert np.allclose((Dx @ f)[full], 2.0)
    assert np.allclose((Dy @ f)[full], -3.0)


def test_rotation_velocity_is_counter_clockwise_frame():
    band, _ = _setup()
    s1, s2 = rotation_velocity(band, 2.0)
    interior = band.kind == KIND_INTERIOR
    assert np.allclose(s1[interior], 2.0 * band.xy[interior, 1])
    assert np.allclose(s2[interior], -2.0 * band.xy[interior, 0])


def test_upwind_switch():
    assert not upwind_switch(1.0, 1.0, 0.01)
    assert upwind_switch(1.0, 1000.0, 0.01)
    # Peclet omega h / (2 D) = 1 exactly is not above the threshold
    assert not upwind_switch(1.0, 200.0, 0.01)
    assert upwind_switch(1.0, 200.0 * (1 + 1e-12), 0.01)


@given(st.floats(0.1, 10.0), st.floats(0.0, 2000.0), st.floats(0.001, 0.1))
def test_upwind_switch_matches_peclet(D, omega, h):
    assert upwind_switch(D, omega, h) == (omega * h / (2 * D) > 1.0)


def test_penalty_constraint_satisfied_at_steady_state():
    # v - E v - g = O(h^2) for the steady penalised solution
    res = []
    for h in (0.04, 0.02):
        band, ext = _setup(h, (StationaryTrap((0.0, 0.0), 0.2),))
        sys = assemble_parabolic(band, ext)
        v = solve_linear(sys.M, -sys.rhs_const)
        res.append(np.max(np.abs(v - ext.E @ v - ext.g)))
    assert res[1] < res[0]
    assert res[1] < 10 * 0.02**2
