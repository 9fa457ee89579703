from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, optimize

from mfpt.asymptotics import (bisect, case_map, chi_prime, fast_rotation_derivative_equation,
                              fast_rotation_opt_radius, fast_rotation_profile, green_matrix, kappa1,
                              kappa1_prime, kappa1_second, leading_avg, near_disk_coefficients,
                              neumann_green_disk, neumann_green_disk_closed, neumann_regular_part,
                              optimal_ring_radius_leading, optimal_ring_radius_perturbed,
                              sigma_correction, thin_ellipse_H, thin_ellipse_three_trap, thin_ellipse_u0,
                              thin_rect_three_trap, thin_rect_two_trap, two_trap_ellipse_expansion)
from mfpt.band import build_band
from mfpt.errors import CoincidentPoints, DomainError, NoRootInBracket
from mfpt.geometry import Disk
from mfpt.quadrature import build_weights

RING_TABLE = {2: 0.4536, 3: 0.5517, 4: 0.5985, 5: 0.6251, 6: 0.6417, 7: 0.6527, 8: 0.6604,
              9: 0.6662, 10: 0.6706}


def _central(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


@pytest.mark.parametrize("m,rc", sorted(RING_TABLE.items()))
def test_leading_ring_radius_table(m, rc):
    assert round(optimal_ring_radius_leading(m), 4) == rc


def test_leading_radius_is_stationary_point_of_kappa1():
    rc = optimal_ring_radius_leading(2)
    assert abs(_central(lambda r: kappa1(2, r), rc)) < 1e-6
    assert kappa1_second(2, rc) > 0


@pytest.mark.parametrize("m", [2, 3, 5, 10])
@pytest.mark.parametrize("rc", [0.2, 0.45, 0.7, 0.9])
def test_kappa1_derivatives_match_finite_differences(m, rc):
    assert kappa1_prime(m, rc) == pytest.approx(_central(lambda r: kappa1(m, r), rc), rel=1e-6)
    assert kappa1_second(m, rc) == pytest.approx(_central(lambda r: kappa1_prime(m, r), rc), rel=1e-6)


def test_kappa1_second_matches_two_trap_closed_form():
    r = 0.4536
    closed = 2 / (math.pi * r**2) * (0.25 + r**2 + r**4 * (3 + r**4) / (1 - r**4) ** 2)
    assert kappa1_second(2, r) == pytest.approx(closed, rel=1e-12)


def test_kappa1_diverges_at_the_ends():
    assert kappa1(3, 1e-8) > kappa1(3, 0.5) + 1
    assert kappa1(3, 1 - 1e-10) > kappa1(3, 0.5) + 1
    with pytest.raises(DomainError):
        kappa1(3, 1.0)
    with pytest.raises(DomainError):
        kappa1(3, 0.0)


@pytest.mark.parametrize("m,rc,expect", [(2, 0.4536, 0.5120), (3, 0.5517, 0.2964), (4, 0.5985, 0.1998)])
def test_leading_average_values(m, rc, expect):
    # quoted to four decimals
    assert leading_avg(m, rc, 0.05) == pytest.approx(expect, abs=1e-4)


def test_leading_average_scales_with_diffusivity():
    assert leading_avg(3, 0.5, 0.05, D=4.0) == pytest.approx(leading_avg(3, 0.5, 0.05) / 4, rel=1e-14)
    with pytest.raises(DomainError):
        leading_avg(3, 0.5, 1.5)


def test_sigma_correction_values():
    assert sigma_correction(2, 2, 0.4536) == pytest.approx(-0.2149, abs=5e-4)
    assert sigma_correction(3, 3, 0.5, psi=math.pi / 6) == pytest.approx(0.0, abs=1e-15)


@given(st.integers(2, 10), st.integers(1, 40), st.floats(0.05, 0.95), st.floats(0, 2 * math.pi))
def test_sigma_correction_dichotomy(m, N, rc, psi):
    val = sigma_correction(m, N, rc, psi)
    if N % m:
        assert val == 0.0
    else:
        assert math.isfinite(val)


def test_chi_prime_two_trap_form():
    for r in (0.3, 0.4536, 0.6):
        assert chi_prime(2, r) == pytest.approx(4 * r * (r**4 + 1) / (1 - r**4) ** 2, rel=1e-12)


def test_near_disk_coefficients():
    c3 = near_disk_coefficients(3, eps=0.05)
    c4 = near_disk_coefficients(4, eps=0.05)
    assert (c3.rc1, c3.u0, c3.u1) == pytest.approx((0.2664, 0.2964, -0.1168), abs=5e-4)
    assert (c4.rc1, c4.u0, c4.u1) == pytest.approx((0.1985, 0.1998, -0.0663), abs=5e-4)
    assert c3.rc1 > 0 and c4.rc1 > 0


def test_perturbed_ring_radius():
    assert optimal_ring_radius_perturbed(3, 3, 0.2) == pytest.approx(0.6049, abs=5e-4)
    assert optimal_ring_radius_perturbed(4, 4, 0.2) == pytest.approx(0.6382, abs=5e-4)
    assert optimal_ring_radius_perturbed(3, 3, 0.0) == optimal_ring_radius_leading(3)
    assert optimal_ring_radius_perturbed(3, 4, 0.2) == optimal_ring_radius_leading(3)


def test_perturbed_radius_from_minimising_two_term_average():
    # rc1 = -U1'(rc0) / u0''(rc0): minimise u0 + sigma U1 directly for small sigma
    m, sigma = 3, 1e-4
    f = lambda r: math.pi * kappa1(m, r) / m + sigma * sigma_correction(m, m, r)  # noqa: E731
    res = optimize.minimize_scalar(f, bounds=(0.3, 0.8), method="bounded", options={"xatol": 1e-12})
    rc0 = optimal_ring_radius_leading(m)
    assert (res.x - rc0) / sigma == pytest.approx(near_disk_coefficients(m).rc1, rel=1e-3)


def test_two_trap_ellipse_expansion():
    rc, u = two_trap_ellipse_expansion(1.0)
    assert rc == pytest.approx(0.4536, abs=5e-5)
    assert u == pytest.approx(0.5120, abs=5e-5)
    c = near_disk_coefficients(2, eps=0.05)
    assert c.rc1 == pytest.approx(0.3559, abs=5e-4)
    assert c.u1 == pytest.approx(-0.2149, abs=5e-4)
    rc9, _ = two_trap_ellipse_expansion(0.9)
    assert rc9 == pytest.approx(0.4536 + (1 / 0.9 - 1) * 0.3559, abs=1e-3)
    with pytest.raises(DomainError):
        two_trap_ellipse_expansion(1.2)


def test_thin_rectangle_cases():
    one = case_map("I", 0.2, eps=0.05)
    assert one.x0 == pytest.approx(2.5, rel=1e-12)
    assert one.avg == pytest.approx(2.0625, abs=1e-3)
    two = case_map("II", 0.2, eps=0.05)
    assert two.x0 == pytest.approx(math.pi / 1.6, rel=1e-12)
    three = case_map("I", 0.2, eps=0.05, n_traps=3)
    assert three.x0 == pytest.approx(10 / 3, rel=1e-12)
    with pytest.raises(ValueError):
        case_map("III", 0.2)


@pytest.mark.parametrize("b0", [0.05, 0.1, 0.2])
def test_thin_rectangle_optimum_is_curve_minimum(b0):
    for res in (thin_rect_two_trap(b0, 0.05), thin_rect_three_trap(b0, 0.05)):
        xs = np.linspace(res.eps0 * 2, res.a0 - res.eps0 * 2, 20001)
        assert xs[np.argmin(res.curve(xs))] == pytest.approx(res.x0, abs=2 * (xs[1] - xs[0]))
        assert _central(lambda x: float(res.curve(x)), res.x0, 1e-6) == pytest.approx(0.0, abs=1e-6 * res.avg)


def test_thin_rectangle_three_traps_beat_two():
    for b0 in (0.05, 0.1, 0.2):
        two = thin_rect_two_trap(b0, 0.05)
        three = thin_rect_three_trap(b0, 0.05)
        assert three.avg < two.avg
        assert three.x0 == pytest.approx(2 * three.a0 / 3, rel=0.02)


def test_thin_rectangle_leading_scaling():
    # pi^2 / (192 D b0^2) and pi^2 / (432 D b0^2) as the trap radius vanishes
    b0 = 0.1
    assert thin_rect_two_trap(b0, 1e-6).avg == pytest.approx(math.pi**2 / (192 * b0**2), rel=1e-6)
    assert thin_rect_three_trap(b0, 1e-6).avg == pytest.approx(math.pi**2 / (432 * b0**2), rel=1e-6)


def test_thin_ellipse_constants():
    x0, u, d = thin_ellipse_three_trap(0.1)
    assert d == pytest.approx(0.5666, abs=1e-3)
    assert u * 0.1**2 == pytest.approx(0.0308, abs=1e-3)
    assert x0 == pytest.approx(d / 0.1, rel=1e-14)


def test_thin_ellipse_profile():
    d = 0.5666
    np.testing.assert_allclose(thin_ellipse_u0([-d, 0.0, d], d), 0.0, atol=1e-13)
    X = np.linspace(-0.99, 0.99, 41)
    assert np.all(thin_ellipse_u0(X, d) >= -1e-13)
    np.testing.assert_allclose(thin_ellipse_u0(X, d), thin_ellipse_u0(-X, d))


def test_thin_ellipse_profile_solves_reduced_equation():
    # width-weighted balance (w U')' = -w / D with w = (1 - X^2)^(1/2), away from the traps
    d, D = 0.4, 2.0
    f = lambda x: float(thin_ellipse_u0(x, d, D))  # noqa: E731
    for X in (-0.8, -0.2, 0.3, 0.7):
        g = lambda x: math.sqrt(1 - x * x) * _central(f, x, 1e-4)  # noqa: E731
        assert _central(g, X, 1e-4) == pytest.approx(-math.sqrt(1 - X * X) / D, rel=1e-4)


def test_thin_ellipse_H_minimum():
    ds = np.linspace(0.05, 0.95, 181)
    H = [thin_ellipse_H(d) for d in ds]
    assert ds[int(np.argmin(H))] == pytest.approx(0.5666, abs=0.006)
    with pytest.raises(DomainError):
        thin_ellipse_H(1.2)


def test_fast_rotation_reference_radius():
    assert fast_rotation_opt_radius(0.02, 0.02) == pytest.approx(0.727, abs=0.005)


def test_fast_rotation_root_matches_profile_argmin():
    for eta, eps in ((0.02, 0.02), (0.05, 0.01), (0.01, 0.1)):
        r = fast_rotation_opt_radius(eta, eps)
        res = optimize.minimize_scalar(lambda x: float(fast_rotation_profile(x, eta, eps)),
                                       bounds=(eps + eta + 1e-3, 1 - eta - 1e-6), method="bounded",
                                       options={"xatol": 1e-10})
        assert r == pytest.approx(res.x, abs=1e-6)


def test_fast_rotation_equation_root_is_stationary_point():
    eta, eps = 0.03, 0.02
    r = fast_rotation_opt_radius(eta, eps)
    assert abs(float(fast_rotation_derivative_equation(r, eta, eps))) < 1e-9
    dU = _central(lambda x: float(fast_rotation_profile(x, eta, eps)), r, 1e-6)
    assert abs(dU) < 1e-6


def test_fast_rotation_profile_limits():
    # when the swept annulus touches the central trap the profile stays finite
    eta, eps = 0.02, 0.02
    b = eps + 2 * eta
    limit = 4 * b**2 - b**4 - 4 * math.log(b) - 3
    assert float(fast_rotation_profile(eps + eta + 1e-9, eta, eps)) == pytest.approx(limit, rel=1e-6)
    assert limit > float(fast_rotation_profile(fast_rotation_opt_radius(eta, eps), eta, eps))
    with pytest.raises(DomainError):
        fast_rotation_profile(0.03, eta, eps)
    with pytest.raises(DomainError):
        fast_rotation_profile(0.99, eta, eps)


def test_fast_rotation_argmin_invariant_under_scale():
    rs = np.linspace(0.1, 0.95, 1701)
    a = fast_rotation_profile(rs, 0.02, 0.02, C=1.0)
    b = fast_rotation_profile(rs, 0.02, 0.02, C=37.5)
    assert np.argmin(a) == np.argmin(b)


def test_fast_rotation_profile_is_radial_integral_of_limit_solution():
    # with C = 1/16 the profile is int u rho d rho for the radially averaged problem
    eta, eps, r = 0.05, 0.05, 0.6
    a, b = r - eta, r + eta
    L = math.log(eps / a)
    inner = lambda p: (eps**2 - p**2) / 4 + (a**2 - eps**2) / 4 * math.log(p / eps) / -L  # noqa: E731
    outer = lambda p: (b**2 - p**2) / 4 + 0.5 * math.log(p / b)  # noqa: E731
    val = integrate.quad(lambda p: inner(p) * p, eps, a)[0] + integrate.quad(lambda p: outer(p) * p, b, 1)[0]
    assert float(fast_rotation_profile(r, eta, eps, C=1 / 16)) == pytest.approx(val, rel=1e-10)


def test_fast_rotation_monotone_in_parameters():
    grid = [0.005, 0.01, 0.02, 0.05, 0.1]
    for eta in grid:
        rs = [fast_rotation_opt_radius(eta, eps) for eps in grid]
        assert np.all(np.diff(rs) > 0)
    for eps in grid:
        rs = [fast_rotation_opt_radius(eta, eps) for eta in grid]
        assert np.all(np.diff(rs) < 0)


def test_fast_rotation_vanishing_traps_give_half_area_radius():
    assert fast_rotation_opt_radius(0.0, 0.0) == pytest.approx(1 / math.sqrt(2), abs=1e-9)
    assert fast_rotation_opt_radius(1e-4, 0.0) == pytest.approx(1 / math.sqrt(2), abs=1e-4)


def test_fast_rotation_errors():
    with pytest.raises(DomainError):
        fast_rotation_opt_radius(0.6, 0.01)
    with pytest.raises(NoRootInBracket):
        bisect(lambda x: x * x + 1, -1.0, 1.0)


def test_green_function_symmetry_and_closed_form():
    rng = np.random.default_rng(3)
    for _ in range(20):
        r = np.sqrt(rng.random(2)) * 0.95
        t = rng.random(2) * 2 * math.pi
        x = np.array([r[0] * math.cos(t[0]), r[0] * math.sin(t[0])])
        y = np.array([r[1] * math.cos(t[1]), r[1] * math.sin(t[1])])
        gxy = neumann_green_disk(x, y)
        assert gxy == pytest.approx(neumann_green_disk(y, x), abs=1e-10)
        assert gxy == pytest.approx(neumann_green_disk_closed(x, y), abs=1e-10)


def test_green_function_tail_bound_and_errors():
    g, tail = neumann_green_disk([0.2, 0.1], [0.5, -0.3], n_terms=20, return_tail=True)
    assert abs(g - neumann_green_disk_closed([0.2, 0.1], [0.5, -0.3])) <= tail + 1e-14
    with pytest.raises(CoincidentPoints):
        neumann_green_disk([0.3, 0.2], [0.3, 0.2])
    with pytest.raises(DomainError):
        neumann_green_disk([1.3, 0.2], [0.3, 0.2])


def test_green_function_has_zero_mean():
    x0 = np.array([0.35, -0.2])
    errs = []
    for h in (0.04, 0.02):
        band = build_band(Disk(1.0), (), 0.0, h)
        w = build_weights(band).w
        pts = band.xy[w > 0]
        # cell centres avoid the source; the log singularity is integrable
        vals = np.array([neumann_green_disk_closed(p, x0) for p in pts])
        errs.append(abs(np.dot(w[w > 0], vals)))
    assert errs[1] < 2e-3
    assert errs[1] < errs[0]


def test_green_matrix_ring_eigenvalue():
    for m in (2, 3, 5, 8):
        rc = 0.4 + 0.03 * m
        pts = [(rc * math.cos(2 * math.pi * k / m), rc * math.sin(2 * math.pi * k / m)) for k in range(m)]
        G = green_matrix(pts)
        np.testing.assert_allclose(G, G.T, atol=1e-14)
        np.testing.assert_allclose(G @ np.ones(m), kappa1(m, rc) * np.ones(m), atol=1e-10)


def test_regular_part_limit():
    x0 = np.array([0.3, 0.4])
    d = np.array([1e-5, 0.0])
    sing = -math.log(1e-5) / (2 * math.pi)
    assert neumann_green_disk_closed(x0 + d, x0) - sing == pytest.approx(neumann_regular_part(x0), abs=1e-4)
