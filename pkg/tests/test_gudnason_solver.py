from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vortexlab.gudnason_solver import (
    CouplingParams,
    SolutionPair,
    concentrating_seed,
    continuation,
    default_bubble_center,
    integral_terms,
    newton_solve,
    residual,
    topological_seed,
)
from vortexlab.torus_field import ScalarField, TorusGrid, VortexSet, background_u0

GRID = TorusGrid.square(64, 2.5)
VS = VortexSet(((0.625, 0.625),), (1,))


def numpy_residual(sol: SolutionPair) -> float:
    """Residual of the system written out with numpy.fft only."""
    g, p = sol.grid, sol.params
    kx = 2 * np.pi * np.fft.fftfreq(g.Nx, d=g.dx)
    ky = 2 * np.pi * np.fft.fftfreq(g.Ny, d=g.dy)
    k2 = kx[:, None] ** 2 + ky[None, :] ** 2

    def lap(a):
        return np.fft.ifft2(-k2 * np.fft.fft2(a)).real

    E1, E2 = np.exp(sol.u1), np.exp(sol.u2.values)
    e2, s = p.eps**2, p.sigma
    f1 = (E1 * (E1 - 1) + s * s * E2 * (E1 - 1) - s * (E1 + E2) * (E2 - 1)) / e2
    f2 = (E2 * (E2 - 1) + s * s * E1 * (E2 - 1) - s * (E1 + E2) * (E1 - 1)) / e2
    r1 = lap(sol.v1.values) - f1 - 8 * np.pi * sol.vortices.total / g.area
    r2 = lap(sol.u2.values) - f2
    return float(max(np.abs(r1).max(), np.abs(r2).max()))


@pytest.fixture(scope="module")
def solved() -> SolutionPair:
    p = CouplingParams.from_eps_sigma(0.2, 0.04, 1.0)
    u0 = background_u0(GRID, VS, 2.0)
    return newton_solve(topological_seed(GRID, u0), p, VS, 1e-10, u0=u0)


def test_coupling_params_consistency():
    p = CouplingParams.from_couplings(2.0, 3.0, 5.0)
    assert p.eps == pytest.approx(0.2)
    assert p.sigma == pytest.approx(0.2)
    q = CouplingParams.from_eps_sigma(p.eps, p.sigma, 5.0)
    assert q.alpha == pytest.approx(2.0) and q.beta_c == pytest.approx(3.0)
    with pytest.raises(ValueError):
        CouplingParams.from_eps_sigma(0.2, 0.1, 1.0)  # sigma/eps^2 = 2.5 > n_frak
    with pytest.raises(ValueError):
        CouplingParams.from_eps_sigma(0.2, 0.0, 1.0)
    with pytest.raises(ValueError):
        CouplingParams(1.0, 1.0, 0.3, 0.0, 1.0, enforce_assumptions=False)
    with pytest.raises(ValueError):
        CouplingParams.from_eps_sigma(-0.1, 0.0, 1.0)
    CouplingParams.from_eps_sigma(0.2, 0.0, 1.0, enforce_assumptions=False)


def test_newton_converges_to_negative_solution(solved):
    assert solved.converged and solved.status == "converged"
    assert solved.residual_inf < 1e-10
    assert numpy_residual(solved) < 1e-9
    assert not solved.spurious
    t = integral_terms(solved)
    assert t["rel1"] < 1e-10 and t["rel2"] < 1e-8
    r1, r2 = residual(solved.v1, solved.u2, solved.params, solved.vortices, solved.u0)
    assert max(r1.norm_inf(), r2.norm_inf()) == pytest.approx(solved.residual_inf, rel=1e-3, abs=1e-12)


def test_newton_quadratic_tail(solved):
    tr = solved.trace
    assert len(tr) >= 3
    # Once in the basin, each step at least squares the residual (up to a constant).
    tail = [(a, b) for a, b in zip(tr, tr[1:]) if 1e-8 < a < 1e-2]
    assert tail
    for a, b in tail:
        assert b <= 50 * a * a


def test_sigma_zero_decouples():
    p = CouplingParams.from_eps_sigma(0.2, 0.0, 1.0, enforce_assumptions=False)
    u0 = background_u0(GRID, VS, 2.0)
    sol = newton_solve(topological_seed(GRID, u0), p, VS, 1e-10, u0=u0)
    assert sol.converged
    assert np.abs(sol.u2.values).max() < 1e-10
    assert numpy_residual(sol) < 1e-9
    E1 = np.exp(sol.u1)
    mass = (E1 * (1 - E1)).sum() * GRID.cell_area / p.eps**2
    assert mass == pytest.approx(8 * np.pi, rel=1e-10)


def test_perturbed_start_returns_to_same_solution(solved):
    rng = np.random.default_rng(7)
    X, Y = GRID.mesh()
    bump = 0.05 * np.sin(2 * np.pi * X / GRID.Lx + rng.uniform()) * np.cos(2 * np.pi * Y / GRID.Ly)
    init = (ScalarField(GRID, solved.v1.values + bump), ScalarField(GRID, solved.u2.values - bump))
    again = newton_solve(init, solved.params, VS, 1e-10, u0=solved.u0)
    assert again.converged
    assert np.abs(again.v1.values - solved.v1.values).max() < 1e-8
    assert np.abs(again.u2.values - solved.u2.values).max() < 1e-8


def test_newton_input_validation(solved):
    with pytest.raises(ValueError):
        newton_solve(solved, solved.params, VS, tol=0.0)
    bad = solved.v1.values.copy()
    with pytest.raises(TypeError):
        newton_solve((bad, bad), solved.params, VS)
    other = TorusGrid.square(32, 2.5)
    with pytest.raises(ValueError):
        newton_solve((ScalarField(other, np.zeros(other.shape)), solved.u2), solved.params, VS)


def test_overflow_is_reported_not_raised(solved):
    huge = ScalarField(GRID, np.full(GRID.shape, 800.0))
    sol = newton_solve((huge, huge), solved.params, VS, u0=solved.u0)
    assert not sol.converged and sol.status == "overflow"


def test_max_iters_status(solved):
    u0 = solved.u0
    sol = newton_solve(topological_seed(GRID, u0), solved.params, VS, 1e-10, max_iters=1, u0=u0)
    assert not sol.converged and sol.status == "max_iters"


def test_continuation_and_schedule_checks():
    sched = [CouplingParams.from_eps_sigma(e, e * e, 1.0) for e in (0.2, 0.16, 0.128)]
    res = continuation(sched, "topological", VS, GRID)
    assert res.completed and len(res.solutions) == 3
    assert [s["index"] for s in res.steps] == [0, 1, 2]
    assert all(not s.spurious for s in res.solutions)
    # Topological solutions increase as eps decreases (maximal branch).
    maxes = [float(s.u1.max()) for s in res.solutions]
    assert maxes == sorted(maxes)
    with pytest.raises(ValueError):
        continuation(sched[::-1], "topological", VS, GRID)
    with pytest.raises(ValueError):
        continuation(sched, "bogus", VS, GRID)
    with pytest.raises(ValueError):
        continuation([], "topological", VS, GRID)


def test_infeasible_eps_does_not_converge():
    # Solutions need 8 pi M eps^2 <= |T| / 4; eps = 0.25 on a 2.5-torus violates it.
    assert 8 * np.pi * 0.25**2 > GRID.area / 4
    sched = [CouplingParams.from_eps_sigma(0.25, 0.0625, 1.0)]
    res = continuation(sched, "topological", VS, GRID)
    assert not res.completed and res.failed_step == 0
    assert res.steps[0]["status"] == "line_search_failed"


def test_continuation_records_failure():
    sched = [CouplingParams.from_eps_sigma(e, e * e, 1.0) for e in (0.2, 0.16)]
    res = continuation(sched, "topological", VS, GRID, max_iters=1)
    assert not res.completed and res.failed_step == 0
    assert res.steps[0]["status"] == "max_iters" and not res.solutions


def test_concentrating_seed_shape():
    grid = TorusGrid.square(64, 1.0)
    vs = VortexSet(((0.25, 0.25),), (1,))
    p = CouplingParams.from_eps_sigma(0.1, 0.01, 1.0)
    u0 = background_u0(grid, vs, 2.0)
    v1, u2 = concentrating_seed(grid, p, vs, u0)
    q = default_bubble_center(grid, vs)
    assert q == pytest.approx((0.75, 0.75))
    u1 = v1.values + u0.values
    i, j = np.unravel_index(np.argmax(u1), grid.shape)
    assert grid.distance(grid.node((i, j)), q) < 2 * grid.dx
    assert np.allclose(u2.values, 2 * math.log(0.1) - 1)


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0.1, 50.0), beta_c=st.floats(0.1, 50.0))
def test_property_coupling_roundtrip(alpha, beta_c):
    s = alpha + beta_c
    eps, sigma = 1.0 / s, (beta_c - alpha) / s
    p = CouplingParams(alpha, beta_c, eps, sigma, 1.0, enforce_assumptions=False)
    q = CouplingParams.from_eps_sigma(p.eps, p.sigma, 1.0, enforce_assumptions=False)
    assert q.alpha == pytest.approx(alpha, rel=1e-10)
    assert q.beta_c == pytest.approx(beta_c, rel=1e-10)
    ok = 0 < sigma < 1 and sigma / eps**2 <= 1.0
    if ok:
        CouplingParams(alpha, beta_c, eps, sigma, 1.0)
    else:
        with pytest.raises(ValueError):
            CouplingParams(alpha, beta_c, eps, sigma, 1.0)
