from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfpt.errors import ObjectiveFailure
from mfpt.geometry import Disk, Ellipse, Rectangle, Star, StationaryTrap
from mfpt.optimize import (PENALTY, PsoConfig, layout_feasible, local_refine, optimize_moving_radius,
                           pso, sweep_1d)
from mfpt.optimize import _argmin
from mfpt.solver import solve_stationary


def test_sweep_quadratic():
    res = sweep_1d(lambda r: (r - 0.5) ** 2, (0.0, 1.0), 0.25)
    assert res.argmin == 0.5 and res.min == 0.0
    np.testing.assert_allclose(res.params, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_sweep_includes_endpoint_off_grid():
    res = sweep_1d(lambda r: -r, (0.0, 1.0), 0.3)
    np.testing.assert_allclose(res.params, [0.0, 0.3, 0.6, 0.9, 1.0])
    assert res.argmin == 1.0


def test_sweep_tie_goes_to_smaller_parameter():
    res = sweep_1d(lambda r: min(abs(r - 0.25), abs(r - 0.75)), (0.0, 1.0), 0.25)
    assert res.argmin == 0.25


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=30))
def test_argmin_invariant_under_order(values):
    samples = list(zip(np.arange(len(values)) * 0.1, values))
    assert _argmin(samples) == _argmin(samples[::-1])
    p, v = _argmin(samples)
    assert v == min(values)


def test_sweep_samples_sorted_and_minimal():
    rng = np.random.default_rng(0)
    table = {}

    def f(r):
        table[r] = rng.random()
        return table[r]

    res = sweep_1d(f, (0.0, 2.0), 0.1)
    assert list(res.params) == sorted(res.params)
    assert res.min == min(table.values()) == table[res.argmin]


def test_sweep_reports_failing_parameter():
    def f(r):
        if r > 0.45:
            raise RuntimeError("boom")
        return r

    with pytest.raises(ObjectiveFailure) as info:
        sweep_1d(f, (0.0, 1.0), 0.1)
    assert info.value.parameter == pytest.approx(0.5)
    assert isinstance(info.value.__cause__, RuntimeError)


def test_sweep_rejects_bad_step():
    with pytest.raises(ValueError):
        sweep_1d(lambda r: r, (0.0, 1.0), 0.0)
    with pytest.raises(ValueError):
        sweep_1d(lambda r: r, (1.0, 0.0), 0.1)


def test_sweep_parallel_matches_serial():
    f = lambda r: np.cos(7 * r)  # noqa: E731
    a = sweep_1d(f, (0.0, 1.0), 0.05)
    b = sweep_1d(f, (0.0, 1.0), 0.05, jobs=3)
    assert a.samples == b.samples


def test_pso_sphere_six_dimensions():
    cfg = PsoConfig(bounds=[(-1.0, 1.0)] * 6, n_particles=40, n_iters=200, seed=7)
    res = pso(lambda x: float(np.sum(x**2)), cfg)
    assert res.value <= 1e-6
    assert len(res.trace) == 201
    assert np.all(np.diff(res.trace) <= 0)
    assert res.n_evals == 40 * 201


def test_pso_is_reproducible():
    cfg = PsoConfig(bounds=[(-2.0, 2.0), (-1.0, 3.0)], n_particles=15, n_iters=30, seed=11)
    f = lambda x: float((x[0] - 1) ** 2 + 10 * (x[1] - x[0] ** 2) ** 2)  # noqa: E731
    a, b = pso(f, cfg), pso(f, cfg)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.trace == b.trace
    c = pso(f, PsoConfig(bounds=cfg.bounds, n_particles=15, n_iters=30, seed=12))
    assert c.trace != a.trace


def test_pso_stays_in_box_and_penalises_infeasible():
    seen = []

    def f(x):
        seen.append(x.copy())
        return float(np.sum((x - 0.9) ** 2))

    feasible = lambda x: x[0] <= 0.5  # noqa: E731
    cfg = PsoConfig(bounds=[(0.0, 1.0), (0.0, 1.0)], n_particles=20, n_iters=40, seed=3)
    res = pso(f, cfg, feasible=feasible)
    pts = np.array(seen)
    assert np.all(pts >= 0.0) and np.all(pts <= 1.0)
    # infeasible points never reach the objective
    assert np.all(pts[:, 0] <= 0.5)
    assert res.x[0] <= 0.5 and res.value < PENALTY
    # the constrained optimum sits on the penalty edge at (0.5, 0.9)
    assert res.value == pytest.approx(0.16, abs=2e-3)


def test_pso_warns_on_nondeterministic_objective():
    rng = np.random.default_rng(0)
    cfg = PsoConfig(bounds=[(0.0, 1.0)], n_particles=4, n_iters=3, seed=0)
    with pytest.warns(RuntimeWarning):
        pso(lambda x: float(rng.random()), cfg)


def test_pso_bad_bounds():
    with pytest.raises(ValueError):
        pso(lambda x: 0.0, PsoConfig(bounds=[(1.0, 0.0)]))


def test_local_refine_quadratic():
    x, v = local_refine(lambda x: float((x[0] - 0.3) ** 2 + 2 * (x[1] + 0.2) ** 2), [0.8, 0.5], 0.1,
                        xatol=1e-6)
    assert x == pytest.approx([0.3, -0.2], abs=1e-4)
    assert v < 1e-8


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_local_refine_never_worse(a, b):
    f = lambda x: float(np.sin(5 * x[0]) * np.cos(3 * x[1]) + 0.1 * x[0] ** 2)  # noqa: E731
    x0 = np.array([a, b])
    x, v = local_refine(f, x0, 0.05, maxfev=60)
    assert v <= f(x0)
    assert v == f(x)


def test_local_refine_respects_feasibility():
    feasible = lambda x: x[0] >= 1.0  # noqa: E731
    x, v = local_refine(lambda x: float(np.sum(x**2)), [2.0, 1.0], 0.2, feasible=feasible)
    assert x[0] >= 1.0
    assert v == pytest.approx(1.0, abs=1e-3)


def test_layout_feasible():
    d = Disk(1.0)
    assert layout_feasible(d, [(0.0, 0.0), (0.5, 0.0)], 0.1)
    assert not layout_feasible(d, [(0.0, 0.0), (0.15, 0.0)], 0.1)
    assert not layout_feasible(d, [(0.95, 0.0)], 0.1)
    assert not layout_feasible(d, [(1.2, 0.0)], 0.1)
    assert not layout_feasible(d, [(0.85, 0.0)], 0.1, clearance=0.1)
    assert layout_feasible(Star(0.2, 3), [(0.6, 0.0)], 0.05)
    assert layout_feasible(Rectangle(1.0, 0.5), [(0.5, 0.0), (-0.5, 0.0)], 0.2)
    assert not layout_feasible(Rectangle(1.0, 0.5), [(0.5, 0.35)], 0.2)


def test_two_traps_in_ellipse_refine_to_symmetric_layout():
    dom = Ellipse(1 / 0.72, 0.72)

    def f(x):
        traps = (StationaryTrap((x[0], 0.0), 0.1), StationaryTrap((x[1], 0.0), 0.1))
        return solve_stationary(dom, traps, h=0.04).avg

    # the grid is mirror symmetric, so the objective is exactly symmetric
    assert f([0.3, -0.5]) == pytest.approx(f([0.5, -0.3]), rel=1e-12)
    x, _ = local_refine(f, [0.4, -0.75], 0.1, xatol=5e-3, maxfev=120)
    assert abs(x[0] + x[1]) <= 0.02


def test_moving_radius_fast_rotation_leaves_centre():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = optimize_moving_radius(Disk(1.0), 10.0, 0.05, h=0.04, dr=0.2, r_range=(0.0, 0.8))
    np.testing.assert_allclose(res.params, [0.0, 0.2, 0.4, 0.6, 0.8])
    assert res.argmin > 0.0


def test_moving_radius_needs_disk_or_ellipse():
    with pytest.raises(TypeError):
        optimize_moving_radius(Rectangle(1.0, 0.5), 5.0, 0.05, h=0.05)
