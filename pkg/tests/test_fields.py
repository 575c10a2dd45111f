import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sacdrop.errors import GridMismatch
from sacdrop.fields import (
    ScalarField,
    build_grid,
    h1eps_norm,
    inner,
    laplacian_neumann,
    local_spacing,
    mean_mass,
    read_field_binary,
    refined_grid,
    write_field_binary,
    write_field_csv,
)

from conftest import DELTA


def test_weights_sum_to_area(disk_grid, ellipse):
    assert disk_grid.weights.sum() == pytest.approx(np.pi / DELTA**2, rel=1e-8)
    g = build_grid(ellipse, 96, 40)
    assert g.weights.sum() == pytest.approx(np.pi * 1.2 / DELTA**2, rel=1e-8)
    assert np.all(g.weights > 0)


def test_inner_examples(disk_grid):
    g = disk_grid
    one = np.ones(g.n_nodes)
    assert g.inner(one, one) == pytest.approx(np.pi / DELTA**2, rel=1e-8)
    # int x^2 over a disk of radius R = pi R^4 / 4; lumped quadrature is second order
    R = 1 / DELTA
    assert g.inner(g.x, g.x) == pytest.approx(np.pi * R**4 / 4, rel=2e-4)
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, g.n_nodes))
    assert g.inner(a, b) == g.inner(b, a)
    fa, fb = ScalarField(a, g), ScalarField(b, g)
    assert inner(fa, fb) == g.inner(a, b)


def test_grid_mismatch(disk_grid, small_grid):
    with pytest.raises(GridMismatch):
        disk_grid.inner(np.ones(small_grid.n_nodes), np.ones(small_grid.n_nodes))
    with pytest.raises(GridMismatch):
        inner(ScalarField(np.ones(small_grid.n_nodes), small_grid), ScalarField(np.ones(disk_grid.n_nodes), disk_grid))


def test_h1eps_examples(disk, disk_grid):
    g = disk_grid
    c = -1.7 * np.ones(g.n_nodes)
    assert g.h1eps_norm(c, 0.05) == pytest.approx(1.7 * np.sqrt(np.pi) / DELTA, rel=1e-10)
    v = np.sin(0.3 * g.x) + g.y / 5
    l2 = g.norm(v)
    eps = 1e-3
    assert 0 <= g.h1eps_norm(v, eps) - l2 <= eps**2 * g.grad_sq(v) / (2 * l2) + 1e-15
    # eps^2 int |grad x|^2 + int x^2 = eps^2 pi R^2 + pi R^4 / 4 on a 256^2 grid
    fine = build_grid(disk, 256, 256)
    R, e = 1 / DELTA, 0.05
    exact = e * e * np.pi * R**2 + np.pi * R**4 / 4
    assert h1eps_norm(ScalarField(fine.x, fine), e) ** 2 == pytest.approx(exact, rel=1e-4)


def test_laplacian_examples(disk_grid):
    g = disk_grid
    np.testing.assert_allclose(g.laplacian(np.full(g.n_nodes, 3.0)), 0.0, atol=1e-10)
    lap = laplacian_neumann(ScalarField(g.x**2 + g.y**2, g)).values
    interior = (np.hypot(g.x, g.y) < 0.8 / DELTA) & (np.arange(g.n_nodes) > 0)
    # the single axis node, where elements degenerate, is excluded
    np.testing.assert_allclose(lap[interior], 4.0, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_laplacian_symmetric(small_grid, seed):
    g = small_grid
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, g.n_nodes))
    lhs, rhs = g.inner(g.laplacian(a), b), g.inner(a, g.laplacian(b))
    assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1e-300) + 1e-12


def test_stiffness_kernel_is_constants(disk_grid):
    s = disk_grid.stiffness
    np.testing.assert_allclose(s @ np.ones(disk_grid.n_nodes), 0.0, atol=1e-10)
    assert abs(s - s.T).max() == 0.0


def test_mean_mass(disk_grid):
    g = disk_grid
    mean, mass = mean_mass(ScalarField(np.ones(g.n_nodes), g))
    assert mean == pytest.approx(1.0)
    assert mass == pytest.approx(np.pi / DELTA**2, rel=1e-10)
    odd = np.sin(g.node_theta) * g.node_q
    assert abs(g.mean(odd)) < 1e-12


def test_binary_roundtrip(tmp_path, disk_grid, small_grid):
    v = np.cos(disk_grid.x)
    p = tmp_path / "f.sacf"
    write_field_binary(p, v, disk_grid)
    back = read_field_binary(p, disk_grid)
    np.testing.assert_array_equal(back, v)
    with pytest.raises(GridMismatch):
        read_field_binary(p, small_grid)


def test_csv_writer(tmp_path, small_grid):
    p = tmp_path / "f.csv"
    write_field_csv(p, small_grid.x, small_grid)
    lines = p.read_text().splitlines()
    assert len(lines) == small_grid.n_nodes + 1


def test_rows_roundtrip(small_grid):
    v = np.arange(small_grid.n_nodes, dtype=float)
    v[0] = 5.0
    np.testing.assert_array_equal(small_grid.from_rows(small_grid.to_rows(v)), v)


def test_refined_grid_spacing(disk):
    h = 0.03
    g = refined_grid(disk, h, 0.0, 1.5)
    p = disk.point(0.0)
    assert local_spacing(g, p, 1.2) <= 1.3 * h


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_integration_by_parts(small_grid, seed):
    g = small_grid
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, g.n_nodes))
    lap_term = g.inner(g.laplacian(a), b)
    grad_term = g.grad_inner(a, b)
    assert abs(lap_term + grad_term) <= 1e-9 * max(abs(grad_term), g.grad_sq(a) ** 0.5 * g.grad_sq(b) ** 0.5)


def test_poincare_type_inequality(disk_grid):
    g = disk_grid
    rng = np.random.default_rng(7)
    for _ in range(50):
        # smooth-ish random field: a few random Fourier-Bessel-like bumps plus noise
        v = np.sin(rng.uniform(0, 2, 1) * g.x + rng.uniform(0, 2, 1) * g.y) + 0.1 * rng.normal(size=g.n_nodes)
        v -= g.mean(v)
        assert g.grad_sq(v) <= 1.01 * g.norm(g.laplacian(v)) * g.norm(v)
