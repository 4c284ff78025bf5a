"""Newton-Krylov continuation for the two-component Gudnason system on a torus.

Unknowns are v1 = u1 - u0 and u2, where u0 carries the vortex sources.
The discrete system is

    Delta v1 = RHS1(u1, u2) + 8 pi M / |T|,   Delta u2 = RHS2(u1, u2)

with E_k = exp(u_k) and

    RHS1 = [E1(E1-1) + s^2 E2(E1-1) - s(E1+E2)(E2-1)] / eps^2
    RHS2 = [E2(E2-1) + s^2 E1(E2-1) - s(E1+E2)(E1-1)] / eps^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .radial_limit import invert_beta, shoot
from .torus_field import (
    ScalarField,
    TorusGrid,
    VortexSet,
    background_u0,
    irfft2,
    lap_array,
    rfft2,
    wrap,
)

DEFAULT_TAPER = 2.0
DEFAULT_TOL = 1e-10
FLOOR_TOL = 1e-8
TOPOLOGICAL = "topological"
CONCENTRATING = "concentrating"


@dataclass(frozen=True)
class CouplingParams:
    """Gauge couplings with eps = 1/(alpha+beta_c), sigma = (beta_c-alpha)/(alpha+beta_c)."""

    alpha: float
    beta_c: float
    eps: float
    sigma: float
    n_frak: float
    enforce_assumptions: bool = True

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta_c > 0):
            raise ValueError("couplings alpha and beta_c must be positive")
        s = self.alpha + self.beta_c
        if abs(self.eps * s - 1) > 1e-12 or abs(self.sigma - (self.beta_c - self.alpha) / s) > 1e-12:
            raise ValueError("eps/sigma inconsistent with (alpha, beta_c)")
        if self.enforce_assumptions:
            if not 0 < self.sigma < 1:
                raise ValueError(f"sigma={self.sigma} outside (0, 1)")
            ratio = self.sigma / self.eps**2
            if not 0 < ratio <= self.n_frak * (1 + 1e-12):
                raise ValueError(
                    f"weak coupling violated: sigma/eps^2 = {ratio:.6g} > n_frak = {self.n_frak}"
                )

    @classmethod
    def from_couplings(cls, alpha: float, beta_c: float, n_frak: float) -> "CouplingParams":
        s = alpha + beta_c
        return cls(alpha, beta_c, 1.0 / s, (beta_c - alpha) / s, n_frak)

    @classmethod
    def from_eps_sigma(
        cls, eps: float, sigma: float, n_frak: float, enforce_assumptions: bool = True
    ) -> "CouplingParams":
        if not eps > 0:
            raise ValueError("eps must be positive")
        return cls((1 - sigma) / (2 * eps), (1 + sigma) / (2 * eps), eps, sigma, n_frak,
                   enforce_assumptions)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta_c": self.beta_c, "eps": self.eps,
                "sigma": self.sigma, "n_frak": self.n_frak}


@dataclass(frozen=True)
class SolutionPair:
    """A Newton solve of the system at fixed parameters."""

    params: CouplingParams
    vortices: VortexSet
    v1: ScalarField
    u2: ScalarField
    u0: ScalarField
    residual_inf: float
    newton_iters: int
    branch_tag: str
    converged: bool = True
    status: str = "converged"
    trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def grid(self) -> TorusGrid:
        return self.v1.grid

    @property
    def u1(self) -> np.ndarray:
        return self.v1.values + self.u0.values

    @property
    def spurious(self) -> bool:
        """True when the negativity property u1 < 0, u2 < 0 fails."""
        return bool(self.u1.max() >= 0 or self.u2.values.max() >= 0)


class GudnasonSystem:
    """Residual, Jacobian coefficients and linear solves at fixed parameters."""

    def __init__(
        self,
        grid: TorusGrid,
        params: CouplingParams,
        vortices: VortexSet,
        u0: ScalarField | None = None,
        taper: float | None = DEFAULT_TAPER,
    ) -> None:
        self.grid = grid
        self.params = params
        self.vortices = vortices
        self.u0 = u0 if u0 is not None else background_u0(grid, vortices, taper)
        if self.u0.grid != grid:
            raise ValueError("grid mismatch between u0 and system grid")
        self.source = 8 * np.pi * vortices.total / grid.area

    def exps(self, v1: np.ndarray, u2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with np.errstate(over="raise"):
            try:
                return np.exp(v1 + self.u0.values), np.exp(u2)
            except FloatingPointError as exc:
                raise OverflowError("exponential overflow in residual") from exc

    def nonlinear(self, v1: np.ndarray, u2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        eps, s = self.params.eps, self.params.sigma
        E1, E2 = self.exps(v1, u2)
        n1 = (E1 * (E1 - 1) + s * s * E2 * (E1 - 1) - s * (E1 + E2) * (E2 - 1)) / eps**2
        n2 = (E2 * (E2 - 1) + s * s * E1 * (E2 - 1) - s * (E1 + E2) * (E1 - 1)) / eps**2
        return n1 + self.source, n2

    def residual(self, v1: np.ndarray, u2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n1, n2 = self.nonlinear(v1, u2)
        return lap_array(v1, self.grid) - n1, lap_array(u2, self.grid) - n2

    def coefficients(self, v1: np.ndarray, u2: np.ndarray):
        """Partial derivatives a_jk = d RHS_j / d u_k (analytic)."""
        eps, s = self.params.eps, self.params.sigma
        E1, E2 = self.exps(v1, u2)
        inv = 1.0 / eps**2
        a11 = (E1 * (2 * E1 - 1) + s * s * E2 * E1 - s * E1 * (E2 - 1)) * inv
        a12 = (s * s * E2 * (E1 - 1) - s * E2 * (2 * E2 + E1 - 1)) * inv
        a21 = (s * s * E1 * (E2 - 1) - s * E1 * (2 * E1 + E2 - 1)) * inv
        a22 = (E2 * (2 * E2 - 1) + s * s * E1 * E2 - s * E2 * (E1 - 1)) * inv
        return a11, a12, a21, a22

    def newton_direction(
        self,
        v1: np.ndarray,
        u2: np.ndarray,
        r1: np.ndarray,
        r2: np.ndarray,
        rtol: float,
        preconditioner: str = "screened",
        restart: int = 60,
        maxiter: int = 20,
    ) -> tuple[np.ndarray, np.ndarray, int]:
        """Solve J d = -r with right-hand GMRES preconditioned by (Delta - c)^-1."""
        grid = self.grid
        n = grid.Nx * grid.Ny
        shape = grid.shape
        a11, a12, a21, a22 = self.coefficients(v1, u2)
        if preconditioner == "screened":
            c1 = c2 = 1.0 / self.params.eps**2
        elif preconditioner == "adaptive":
            floor = 1.0 / grid.area
            c1 = max(float(a11.mean()), floor)
            c2 = max(float(a22.mean()), floor)
        else:
            raise ValueError(f"unknown preconditioner {preconditioner!r}")
        p1 = 1.0 / (-grid.k2_half - c1)
        p2 = 1.0 / (-grid.k2_half - c2)

        def matvec(x: np.ndarray) -> np.ndarray:
            x1 = x[:n].reshape(shape)
            x2 = x[n:].reshape(shape)
            y1 = lap_array(x1, grid) - a11 * x1 - a12 * x2
            y2 = lap_array(x2, grid) - a21 * x1 - a22 * x2
            return np.concatenate([y1.ravel(), y2.ravel()])

        def precond(x: np.ndarray) -> np.ndarray:
            x1 = irfft2(p1 * rfft2(x[:n].reshape(shape)), shape)
            x2 = irfft2(p2 * rfft2(x[n:].reshape(shape)), shape)
            return np.concatenate([x1.ravel(), x2.ravel()])

        A = LinearOperator((2 * n, 2 * n), matvec=matvec, dtype=float)
        M = LinearOperator((2 * n, 2 * n), matvec=precond, dtype=float)
        b = -np.concatenate([r1.ravel(), r2.ravel()])
        d, info = gmres(A, b, M=M, rtol=rtol, atol=0.0, restart=restart, maxiter=maxiter)
        return d[:n].reshape(shape), d[n:].reshape(shape), info


def residual(
    v1: ScalarField,
    u2: ScalarField,
    params: CouplingParams,
    vortices: VortexSet,
    u0: ScalarField | None = None,
) -> tuple[ScalarField, ScalarField]:
    """Residual fields (r1, r2) of the transformed system."""
    if v1.grid != u2.grid:
        raise ValueError("grid mismatch between v1 and u2")
    system = GudnasonSystem(v1.grid, params, vortices, u0)
    r1, r2 = system.residual(v1.values, u2.values)
    return ScalarField(v1.grid, r1), ScalarField(v1.grid, r2)


def _as_arrays(init) -> tuple[np.ndarray, np.ndarray, TorusGrid]:
    if isinstance(init, SolutionPair):
        return init.v1.values.copy(), init.u2.values.copy(), init.grid
    v1, u2 = init
    if isinstance(v1, ScalarField):
        if v1.grid != u2.grid:
            raise ValueError("grid mismatch in initial guess")
        return v1.values.copy(), u2.values.copy(), v1.grid
    raise TypeError("initial guess must be a SolutionPair or a pair of ScalarFields")


def newton_solve(
    init,
    params: CouplingParams,
    vortices: VortexSet,
    tol: float = DEFAULT_TOL,
    max_iters: int = 40,
    *,
    u0: ScalarField | None = None,
    taper: float | None = DEFAULT_TAPER,
    preconditioner: str = "screened",
    branch_tag: str = TOPOLOGICAL,
    floor_tol: float = FLOOR_TOL,
) -> SolutionPair:
    """Damped Newton-GMRES on the (v1, u2) system.

    Steps are backtracked (factor 1/2, down to 2^-10) until the residual
    2-norm decreases.  If progress stalls with the sup-norm residual already
    below ``floor_tol`` the result is accepted with status
    ``"roundoff_floor"``; other failures return ``converged=False``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    v1, u2, grid = _as_arrays(init)
    if not (np.all(np.isfinite(v1)) and np.all(np.isfinite(u2))):
        raise ValueError("initial guess is not finite")
    system = GudnasonSystem(grid, params, vortices, u0, taper)
    trace: list[float] = []
    status = "max_iters"
    iters = 0
    try:
        r1, r2 = system.residual(v1, u2)
    except OverflowError:
        r1 = r2 = None
        status = "overflow"
    while r1 is not None:
        res = max(float(np.abs(r1).max()), float(np.abs(r2).max()))
        trace.append(res)
        if res < tol:
            status = "converged"
            break
        stalled = len(trace) >= 4 and res > 0.5 * trace[-4]
        if stalled and res <= floor_tol:
            status = "roundoff_floor"
            break
        if iters >= max_iters:
            break
        forcing = max(min(1e-3, res), 1e-13)
        d1, d2, _ = system.newton_direction(v1, u2, r1, r2, forcing, preconditioner)
        f0 = math.sqrt(float((r1**2).sum() + (r2**2).sum()))
        lam = 1.0
        accepted = False
        while lam >= 2**-10:
            try:
                t1, t2 = system.residual(v1 + lam * d1, u2 + lam * d2)
                with np.errstate(over="ignore"):
                    f1 = math.sqrt(float((t1**2).sum() + (t2**2).sum()))
                if f1 <= (1 - 1e-4 * lam) * f0:
                    accepted = True
                    break
            except OverflowError:
                pass
            lam *= 0.5
        iters += 1
        if not accepted:
            status = "roundoff_floor" if res <= floor_tol else "line_search_failed"
            break
        v1 = v1 + lam * d1
        u2 = u2 + lam * d2
        r1, r2 = t1, t2
    converged = status in ("converged", "roundoff_floor")
    res_inf = trace[-1] if trace else float("inf")
    return SolutionPair(
        params, vortices, ScalarField(grid, v1), ScalarField(grid, u2), system.u0,
        res_inf, iters, branch_tag, converged, status, tuple(trace),
    )


# ---------------------------------------------------------------- seeds
def topological_seed(
    grid: TorusGrid, u0: ScalarField, level: float = -0.1
) -> tuple[ScalarField, ScalarField]:
    """u1 = u2 = level (a small negative constant)."""
    return (ScalarField(grid, level - u0.values), ScalarField(grid, np.full(grid.shape, level)))


def default_bubble_center(grid: TorusGrid, vortices: VortexSet) -> tuple[float, float]:
    """Half a period away from the first vortex in both directions."""
    p = vortices.points[0]
    return ((p[0] + 0.5 * grid.Lx) % grid.Lx, (p[1] + 0.5 * grid.Ly) % grid.Ly)


def concentrating_seed(
    grid: TorusGrid,
    params: CouplingParams,
    vortices: VortexSet,
    u0: ScalarField,
    center: tuple[float, float] | None = None,
    margin: float = 0.05,
    cutoff: float = 0.25,
) -> tuple[ScalarField, ScalarField]:
    """Radial bubble u1 = w(|x - q| / eps; s) with flux 4(1 + margin).

    The profile is frozen at its value at |x - q| = cutoff outside the disk.
    u2 starts at 2 ln eps - 1.
    """
    q = default_bubble_center(grid, vortices) if center is None else center
    s = invert_beta(4.0 * (1.0 + margin))
    prof = shoot(0, s)
    X, Y = grid.mesh()
    rho = np.hypot(wrap(X - q[0], grid.Lx), wrap(Y - q[1], grid.Ly))
    rho = np.minimum(rho, cutoff) / params.eps
    logr = np.log(np.maximum(rho, prof.r_grid[0]))
    u1 = np.interp(logr, np.log(prof.r_grid), prof.w_values)
    u2 = np.full(grid.shape, 2 * math.log(params.eps) - 1)
    return ScalarField(grid, u1 - u0.values), ScalarField(grid, u2)


# ---------------------------------------------------------------- continuation
@dataclass
class ContinuationResult:
    """Converged solutions in schedule order plus a per-step trace."""

    solutions: list[SolutionPair]
    steps: list[dict]
    completed: bool
    failed_step: int | None = None


def _check_schedule(schedule: Sequence[CouplingParams]) -> None:
    if not schedule:
        raise ValueError("empty schedule")
    for a, b in zip(schedule, schedule[1:]):
        if not b.eps < a.eps:
            raise ValueError("schedule must be strictly decreasing in eps")


def continuation(
    schedule: Sequence[CouplingParams],
    seed: str,
    vortices: VortexSet,
    grid: TorusGrid,
    tol: float = DEFAULT_TOL,
    max_iters: int = 40,
    *,
    taper: float | None = DEFAULT_TAPER,
    preconditioner: str | None = None,
    bubble_center: tuple[float, float] | None = None,
    bubble_margin: float = 0.05,
    floor_tol: float = FLOOR_TOL,
) -> ContinuationResult:
    """Warm-started solves along a decreasing-eps schedule.

    On the topological branch a warm start whose max u1 drops below the
    previous step's value has left the maximal (topological) solution; the
    step is then re-solved from the constant seed and the larger solution is
    kept.  The run stops at the first step that fails to converge.
    """
    if seed not in (TOPOLOGICAL, CONCENTRATING):
        raise ValueError(f"unknown seed {seed!r}")
    _check_schedule(schedule)
    vortices.check_grid(grid)
    pc = preconditioner or ("screened" if seed == TOPOLOGICAL else "adaptive")
    u0 = background_u0(grid, vortices, taper)
    solutions: list[SolutionPair] = []
    steps: list[dict] = []

    def solve(init, params):
        return newton_solve(init, params, vortices, tol, max_iters, u0=u0, preconditioner=pc,
                            branch_tag=seed, floor_tol=floor_tol)

    for k, params in enumerate(schedule):
        if seed == TOPOLOGICAL:
            cold = topological_seed(grid, u0)
        else:
            cold = concentrating_seed(grid, params, vortices, u0, bubble_center, bubble_margin)
        reseeded = False
        if not solutions:
            sol = solve(cold, params)
        else:
            sol = solve(solutions[-1], params)
            if seed == TOPOLOGICAL:
                prev_max = float(solutions[-1].u1.max())
                if not sol.converged or float(sol.u1.max()) < prev_max:
                    alt = solve(cold, params)
                    if alt.converged and (not sol.converged or alt.u1.max() > sol.u1.max()):
                        sol = alt
                        reseeded = True
        steps.append({
            "index": k, "eps": params.eps, "sigma": params.sigma,
            "converged": sol.converged, "status": sol.status,
            "residual_inf": sol.residual_inf, "newton_iters": sol.newton_iters,
            "reseeded": reseeded, "trace": list(sol.trace),
        })
        if not sol.converged:
            return ContinuationResult(solutions, steps, False, k)
        solutions.append(sol)
    return ContinuationResult(solutions, steps, True, None)


# ---------------------------------------------------------------- integral identities
def integral_terms(sol: SolutionPair) -> dict:
    """Integrated left/right sides of both lines of the integrated system."""
    eps, s = sol.params.eps, sol.params.sigma
    h = sol.grid.cell_area
    E1 = np.exp(sol.u1)
    E2 = np.exp(sol.u2.values)
    a1 = ((E1 * (1 - E1) + s * s * E2 * (1 - E1)).sum() * h) / eps**2
    b1 = (s * ((E1 + E2) * (1 - E2)).sum() * h) / eps**2
    a2 = ((E2 * (1 - E2) + s * s * E1 * (1 - E2)).sum() * h) / eps**2
    b2 = (s * ((E1 + E2) * (1 - E1)).sum() * h) / eps**2
    target = 8 * np.pi * sol.vortices.total
    d1 = abs(a1 - b1 - target)
    d2 = abs(a2 - b2)
    return {"d1": float(d1), "d2": float(d2), "line1_positive": float(a1),
            "line1_negative": float(b1), "line2_positive": float(a2),
            "line2_negative": float(b2), "target": float(target),
            "rel1": float(d1 / target), "rel2": float(d2 / max(abs(a2), abs(b2), 1e-300))}


def integral_identity_check(sol: SolutionPair) -> tuple[float, float]:
    """(d1, d2): absolute defects of the two integrated equations."""
    t = integral_terms(sol)
    return t["d1"], t["d2"]
