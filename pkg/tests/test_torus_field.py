from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fd_laplacian, torus_green_exact, torus_regular_exact
from vortexlab.torus_field import (
    ScalarField,
    TorusGrid,
    VortexSet,
    background_u0,
    ball_integral,
    disk_integral,
    gradient_array,
    green_function,
    laplacian,
    read_field,
    read_field_csv,
    regular_part,
    solve_poisson_meanzero,
    solve_screened,
    trig_eval,
    write_field,
    write_field_csv,
)


def smooth(grid: TorusGrid) -> np.ndarray:
    X, Y = grid.mesh()
    return np.exp(np.sin(2 * np.pi * X / grid.Lx) + np.cos(2 * np.pi * Y / grid.Ly))


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(1.0, 1.0, 7, 8)
    with pytest.raises(ValueError):
        TorusGrid(1.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        TorusGrid(-1.0, 1.0, 8, 8)
    g = TorusGrid(2.0, 1.0, 64, 32)
    assert g.area == pytest.approx(2.0)
    assert g.dx == pytest.approx(g.dy)


def test_scalar_field_rejects_bad_input():
    g = TorusGrid.square(16)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros((16, 8)))
    bad = np.zeros((16, 16))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        ScalarField(g, bad)


def test_vortex_set_validation():
    with pytest.raises(ValueError):
        VortexSet(((0.1, 0.1),), (0,))
    with pytest.raises(ValueError):
        VortexSet(((0.1, 0.1), (0.1, 0.1)), (1, 1))
    g = TorusGrid.square(16)
    with pytest.raises(ValueError):
        VortexSet(((0.1, 0.1), (0.101, 0.1)), (1, 1)).check_grid(g)
    with pytest.raises(ValueError):
        VortexSet(((1.2, 0.1),), (1,)).check_grid(g)


def test_laplacian_matches_fd_oracle_under_refinement():
    # Spectral Laplacian against the second-order stencil: the gap must fall as h^2.
    errs = []
    for N in (32, 64, 128):
        g = TorusGrid(1.0, 1.5, N, N)
        a = smooth(g)
        spec = laplacian(ScalarField(g, a)).values
        errs.append(np.abs(spec - fd_laplacian(a, g.dx, g.dy)).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


def test_laplacian_exact_on_trig_polynomial():
    g = TorusGrid(1.0, 2.0, 32, 64)
    X, Y = g.mesh()
    kx, ky = 2 * np.pi * 3, 2 * np.pi * 2 / 2.0
    a = np.cos(kx * X) * np.sin(ky * Y)
    lap = laplacian(ScalarField(g, a)).values
    np.testing.assert_allclose(lap, -(kx**2 + ky**2) * a, atol=1e-9)


def test_poisson_meanzero_roundtrip():
    g = TorusGrid.square(64, 1.3)
    f = ScalarField(g, smooth(g))
    u = solve_poisson_meanzero(f)
    assert abs(u.mean()) < 1e-14
    np.testing.assert_allclose(laplacian(u).values, f.values - f.mean(), atol=1e-10)


def test_green_function_mean_zero_and_regular_part_oracle():
    g = TorusGrid.square(256, 1.0)
    G = green_function(g, (0.5, 0.5))
    assert abs(G.mean()) < 1e-12
    for off in ((0.1, 0.05), (0.3, 0.15), (0.2, -0.35)):
        num = regular_part(g, (0.5, 0.5), (0.5 + off[0], 0.5 + off[1]))
        assert num == pytest.approx(torus_regular_exact(*off, 1.0, 1.0), abs=1e-5)


def test_green_function_rectangular_oracle():
    g = TorusGrid(2.0, 1.0, 256, 128)
    G = green_function(g, (0.0, 0.0))
    pts = np.array([[0.5, 0.25], [1.3, 0.6], [0.9, 0.1]])
    num = trig_eval(G.values, g, pts)
    ref = [torus_green_exact(x, y, 2.0, 1.0) for x, y in pts]
    np.testing.assert_allclose(num, ref, atol=2e-5)


def test_regular_part_extrapolation_and_refinement():
    ref = torus_regular_exact(1e-9, 0.0, 1.0, 1.0)
    errs = []
    for N in (64, 128, 256):
        g = TorusGrid.square(N)
        with pytest.raises(ValueError):
            regular_part(g, (0.5, 0.5), (0.5, 0.5))
        errs.append(abs(regular_part(g, (0.5, 0.5), (0.5, 0.5), extrapolate=True) - ref))
    assert errs[-1] < 0.02
    assert errs[-1] < errs[0]


def test_green_translation_invariance():
    g = TorusGrid.square(64)
    a = green_function(g, g.node((5, 9))).values
    b = green_function(g, g.node((21, 40))).values
    np.testing.assert_allclose(np.roll(a, (16, 31), axis=(0, 1)), b, atol=1e-12)


def test_background_u0_mean_zero_and_log_singularity():
    g = TorusGrid.square(128)
    vs = VortexSet(((0.5, 0.5),), (2,))
    u0 = background_u0(g, vs)
    assert abs(u0.mean()) < 1e-12
    # u0 = 4 m ln|x - p| - 8 pi m gamma: compare differences at two radii.
    i, j = g.nearest_node((0.5, 0.5))
    d = u0.values[i + 8, j] - u0.values[i + 32, j]
    r1, r2 = 8 * g.dx, 32 * g.dx
    exact = 8 * np.log(r1 / r2) - 16 * np.pi * (torus_regular_exact(r1, 0, 1, 1)
                                                - torus_regular_exact(r2, 0, 1, 1))
    assert d == pytest.approx(exact, abs=0.02)  # node delta: O((h/r)^2) error
    # The tapered source keeps the flux; far from p it matches the exact
    # -8 pi m G up to an O(h^2) constant.
    errs = []
    for N in (128, 256):
        gn = TorusGrid.square(N)
        ut = background_u0(gn, vs, taper=2.0)
        assert abs(ut.mean()) < 1e-12
        a, b = gn.nearest_node((0.5, 0.5))
        n = int(round(0.25 / gn.dx))
        errs.append(abs(ut.values[a + n, b] + 16 * np.pi * torus_green_exact(0.25, 0.0, 1, 1)))
    assert errs[1] < 2e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_screened_ratio_bounded_by_maximum_principle():
    g = TorusGrid.square(64)
    rng = np.random.default_rng(0)
    f = ScalarField(g, rng.standard_normal(g.shape))
    for eps in (0.2, 0.05):
        sol = solve_screened(f, eps)
        assert sol.ratio_inf <= 1.0 + 1e-12
        lhs = laplacian(sol.field).values - sol.field.values / eps**2
        np.testing.assert_allclose(lhs, f.values, atol=1e-8 * np.abs(f.values).max() / eps**2)
    with pytest.raises(ValueError):
        solve_screened(f, 0.0)


def test_ball_integral_gaussian_and_constant():
    g = TorusGrid.square(256)
    X, Y = g.mesh()
    ell = 0.03
    f = ScalarField(g, np.exp(-((X - 0.4) ** 2 + (Y - 0.6) ** 2) / (2 * ell**2)))
    r = 0.07
    exact = 2 * np.pi * ell**2 * (1 - np.exp(-r * r / (2 * ell**2)))
    assert ball_integral(f, (0.4, 0.6), r) == pytest.approx(exact, rel=2e-3)
    one = ScalarField(g, np.ones(g.shape))
    assert ball_integral(one, (0.0, 0.0), 0.2, subsample=8) == pytest.approx(np.pi * 0.04, rel=2e-3)
    with pytest.raises(ValueError):
        ball_integral(one, (0.0, 0.0), 0.6)


def test_disk_integral_exact_for_band_limited():
    g = TorusGrid.square(64)
    X, Y = g.mesh()
    a = 1.0 + np.cos(2 * np.pi * X)
    # int_{B_r(c)} cos(k x) = cos(k c_x) 2 pi r J1(k r) / k
    from scipy.special import j1

    k, r, c = 2 * np.pi, 0.2, (0.3, 0.7)
    exact = np.pi * r * r + np.cos(k * c[0]) * 2 * np.pi * r * j1(k * r) / k
    assert disk_integral(a, g, c, r) == pytest.approx(exact, rel=1e-12)


def test_trig_eval_and_gradient():
    g = TorusGrid(1.0, 2.0, 32, 64)
    X, Y = g.mesh()
    a = np.sin(2 * np.pi * X) * np.cos(np.pi * Y)
    pts = np.array([[0.123, 0.456], [0.9, 1.7]])
    exact = np.sin(2 * np.pi * pts[:, 0]) * np.cos(np.pi * pts[:, 1])
    np.testing.assert_allclose(trig_eval(a, g, pts), exact, atol=1e-12)
    dx = trig_eval(a, g, pts, (1, 0))
    np.testing.assert_allclose(dx, 2 * np.pi * np.cos(2 * np.pi * pts[:, 0]) * np.cos(np.pi * pts[:, 1]),
                               atol=1e-11)
    gx, gy = gradient_array(a, g)
    np.testing.assert_allclose(gy, -np.pi * np.sin(2 * np.pi * X) * np.sin(np.pi * Y), atol=1e-11)


def test_field_dump_roundtrips(tmp_path):
    g = TorusGrid(1.0, 2.0, 16, 32)
    f = ScalarField(g, np.random.default_rng(3).standard_normal(g.shape))
    write_field(tmp_path / "f.bin", f, "v1")
    h, name = read_field(tmp_path / "f.bin")
    assert name == "v1" and h.grid == g
    assert np.array_equal(h.values, f.values)
    write_field_csv(tmp_path / "f.csv", f)
    c = read_field_csv(tmp_path / "f.csv", g)
    assert np.array_equal(c.values, f.values)
    (tmp_path / "bad.bin").write_bytes((tmp_path / "f.bin").read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_field(tmp_path / "bad.bin")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), L=st.floats(0.5, 3.0))
def test_property_poisson_inverts_laplacian(seed, L):
    g = TorusGrid.square(32, L)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(g.shape)
    a -= a.mean()
    back = solve_poisson_meanzero(laplacian(ScalarField(g, a))).values
    np.testing.assert_allclose(back, a, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(cx=st.floats(0.0, 1.0), cy=st.floats(0.0, 1.0), r=st.floats(0.05, 0.4),
       kx=st.integers(-3, 3), ky=st.integers(-3, 3))
def test_property_disk_integral_periodic(cx, cy, r, kx, ky):
    g = TorusGrid.square(32)
    X, Y = g.mesh()
    a = np.cos(2 * np.pi * (kx * X + ky * Y)) + 0.5
    base = disk_integral(a, g, (cx, cy), r)
    assert disk_integral(a, g, (cx + 1.0, cy - 2.0), r) == pytest.approx(base, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), eps=st.floats(0.02, 1.0))
def test_property_screened_maximum_principle(seed, eps):
    g = TorusGrid.square(32)
    f = ScalarField(g, np.random.default_rng(seed).standard_normal(g.shape))
    assert solve_screened(f, eps).ratio_inf <= 1.0 + 1e-12
