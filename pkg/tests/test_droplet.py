import numpy as np
import pytest
from scipy.integrate import quad

from sacdrop.droplet import (
    DropletBuilder,
    build_droplet,
    c1_star,
    check_upbound,
    cutoff_width,
    eps_upper_bound,
    f,
    heteroclinic_profile,
    potential,
    velocity_c,
    xi_derivatives,
)
from sacdrop.errors import ParamOutOfRange
from sacdrop.fields import build_grid
from sacdrop.geometry import ShapeSpec, build_boundary, signed_distance

from conftest import DELTA


def test_heteroclinic_residual():
    H = heteroclinic_profile()
    R = np.linspace(-20, 20, 1000)
    assert np.max(np.abs(H.ddU(R) - f(H.U(R)))) <= 1e-12
    assert H.U(0.0) == 0.0
    assert H.dU(0.0) == pytest.approx(1 / np.sqrt(2), rel=1e-15)
    assert abs(H.U(20.0) - 1) <= 1e-10 and abs(H.U(-20.0) + 1) <= 1e-10
    Rq = np.linspace(-20, 20, 4001)
    assert abs(np.trapezoid(Rq * H.dU(Rq) ** 2, Rq)) <= 1e-12


def test_heteroclinic_derivative_by_differences():
    H = heteroclinic_profile()
    R = np.linspace(-5, 5, 11)
    h = 1e-5
    np.testing.assert_allclose(H.dU(R), (H.U(R + h) - H.U(R - h)) / (2 * h), atol=1e-9)


def test_potential_normalisation():
    val, _ = quad(lambda s: np.sqrt(potential(s)), -1, 1, epsabs=1e-14)
    assert val == pytest.approx(2 / 3, abs=1e-12)


def test_upper_bound_constant():
    assert c1_star(np.pi) == pytest.approx(8 / np.sqrt(6), rel=1e-14)
    assert eps_upper_bound(0.2, np.pi) == pytest.approx(0.5 * 8 / np.sqrt(6) * 0.04, rel=1e-14)
    check_upbound(0.05, 0.2, np.pi)
    with pytest.raises(ParamOutOfRange):
        check_upbound(0.08, 0.2, np.pi)


def test_build_droplet_properties(disk_setup):
    g, b = disk_setup
    drop = b.build(0.0)
    assert abs(g.mass(drop.u) - (g.weights.sum() - np.pi)) <= 1e-6
    assert np.max(np.abs(drop.u)) <= 1 + 1e-6
    assert 0.5 <= drop.rho <= 1.5
    r = signed_distance(drop.geometry, np.stack([g.x, g.y], axis=1))
    far = r > drop.h_cut
    np.testing.assert_allclose(drop.u[far], 1.0, atol=1e-12)
    z = drop.geometry.center
    k = np.argmin(np.hypot(g.x - z[0], g.y - z[1]))
    assert np.hypot(g.x[k] - z[0], g.y[k] - z[1]) < 1e-10
    assert drop.u[k] == pytest.approx(-1.0, abs=1e-10)


def test_derivative_support(ellipse_setup):
    g, b, xi = ellipse_setup
    drop = b.build(xi)
    r = signed_distance(drop.geometry, np.stack([g.x, g.y], axis=1))
    band = drop.h_cut + 2 * drop.h_xi
    for d in (drop.du, drop.d2u, drop.d3u):
        assert np.all(d[np.abs(r) > band + 1e-9] == 0.0)


def test_calibration_independent_of_history(ellipse_setup):
    g, b, xi = ellipse_setup
    first = b.build(xi)
    b.build(xi + 3.0)
    again = b.build(xi)
    np.testing.assert_array_equal(first.u, again.u)
    np.testing.assert_array_equal(first.du, again.du)


def test_mass_constraint_along_boundary(ellipse_setup):
    g, b, xi = ellipse_setup
    target = g.weights.sum() - np.pi
    for x in (xi - 0.3, xi, xi + 0.4):
        assert abs(g.mass(b.build(x, derivatives=False).u) - target) <= 1e-6


def test_upbound_enforced(disk_grid):
    with pytest.raises(ParamOutOfRange):
        build_droplet(disk_grid, 0.0, 0.08)


def test_disk_rotation_symmetry(disk):
    g = build_grid(disk, 512, 96, q_focus=0.7, q_width=0.05, q_ratio=8)
    eps = 0.06
    du0, d2u0, _ = xi_derivatives(g, 0.0, eps)
    du1, d2u1, _ = xi_derivatives(g, disk.length / 4, eps)
    assert g.norm(du1) == pytest.approx(g.norm(du0), rel=1e-4)
    assert g.norm(d2u1) == pytest.approx(g.norm(d2u0), rel=1e-4)


def test_bulk_correction_keeps_mass(disk_setup):
    g, _ = disk_setup
    b = DropletBuilder(g, 0.05, bulk_correction=True)
    drop = b.build(0.0)
    assert abs(g.mass(drop.u) - (g.weights.sum() - np.pi)) <= 1e-6
    assert drop.bulk_shift == pytest.approx(-0.05 * (2 * np.sqrt(2) / 3) / (4 * drop.rho))


def test_cutoff_width():
    assert cutoff_width(0.05) == pytest.approx(2 * 0.05 * np.log(0.05) ** 2)


def test_velocity_disk_and_vertex(disk, ellipse):
    for xi in np.linspace(0, disk.length, 9):
        assert velocity_c(disk, xi) == 0.0
    assert abs(velocity_c(ellipse, 0.0)) < 1e-10
    assert abs(velocity_c(ellipse, ellipse.length / 4)) < 1e-10


def test_velocity_points_up_the_curvature_gradient(ellipse):
    # between the vertex of maximal curvature (xi = 0) and the minimal one (xi = L/4)
    xi = ellipse.length / 8
    _, kp = ellipse.curvature(xi)
    c = velocity_c(ellipse, xi)
    assert kp < 0 and c < 0
    assert c == pytest.approx(4 / (3 * np.pi) * kp, rel=1e-14)


def test_velocity_linear_in_curvature_slope():
    ratios = []
    for a in (1.1, 1.3):
        curve = build_boundary(ShapeSpec("ellipse", a=a, b=1.0), DELTA)
        xi = curve.length / 8
        _, kp = curve.curvature(xi)
        ratios.append(velocity_c(curve, xi) / kp)
    assert ratios[0] == pytest.approx(ratios[1], rel=1e-10)


def test_calibration_idempotent(ellipse_setup):
    g, b, xi = ellipse_setup
    for x in (xi, xi + 0.7):
        rho = b.build(x, derivatives=False).rho
        rho_again, _, _, _ = b.profile(x, rho0=rho)
        assert abs(rho_again - rho) < 1e-10
