"""Diagnostics for solution sequences: masses, labels, blow-up sites, Pohozaev balance.

Classifiers operate on ``StepRecord`` lists so saved runs can be relabelled
without the fields.  Every public classifier also accepts SolutionPairs.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import maximum_filter

from .gudnason_solver import SolutionPair, integral_terms
from .torus_field import ScalarField, ball_integral, disk_integral, gradient_array, trig_eval, wrap

SITE_RISE = 4.0
SITE_MERGE = 0.1
VORTEX_BALL = 0.1
F1_THRESHOLD = 0.05
S1_SLOPE = (1.8, 2.2)
LOCAL_MASS_RADIUS = 0.2
N_SAMPLES = 16

FIRST = ("f1", "f2", "f3", "undetermined")
SECOND = ("s1", "s2", "undetermined")


@dataclass
class StepRecord:
    eps: float
    sigma: float
    I1: float
    I2: float
    sup_u1: float
    sup_u2: float
    sup_w1: float
    sup_w2: float
    grad_v1_scaled: float
    grad_u2: float
    u2_inf: float
    far_u1: float
    residual_inf: float
    newton_iters: int
    status: str
    d1: float
    d2: float
    rel1: float
    rel2: float
    negative: bool
    sites: list = field(default_factory=list)
    samples: list = field(default_factory=list, repr=False)

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(**d)


def mass_integrals(sol: SolutionPair) -> tuple[float, float]:
    """I1 = eps^-2 int e^u1 (1 - e^u1), I2 = eps^-2 int e^u2 (1 - e^u2)."""
    h = sol.grid.cell_area
    eps2 = sol.params.eps**2
    E1 = np.exp(sol.u1)
    E2 = np.exp(sol.u2.values)
    return float((E1 * (1 - E1)).sum() * h / eps2), float((E2 * (1 - E2)).sum() * h / eps2)


def _vortex_mask(sol: SolutionPair, radius: float) -> np.ndarray:
    grid = sol.grid
    X, Y = grid.mesh()
    mask = np.zeros(grid.shape, dtype=bool)
    for p in sol.vortices.points:
        mask |= np.hypot(wrap(X - p[0], grid.Lx), wrap(Y - p[1], grid.Ly)) < radius
    return mask


def detect_blowup_points(sol: SolutionPair, threshold: float | None = None) -> list[tuple[float, float]]:
    """Local maxima of w1 = u1 - 2 ln eps that qualify as concentration sites.

    With ``threshold=None`` a peak must exceed the median of w1 by 4;
    otherwise it must exceed the absolute ``threshold``.  Peaks closer than
    0.1 are merged into the higher one.
    """
    grid = sol.grid
    w1 = sol.u1 - 2 * math.log(sol.params.eps)
    level = float(np.median(w1)) + SITE_RISE if threshold is None else threshold
    peaks = (maximum_filter(w1, size=3, mode="wrap") == w1) & (w1 > level)
    idx = np.argwhere(peaks)
    order = np.lexsort((idx[:, 1], idx[:, 0], -w1[peaks]))
    kept: list[tuple[float, float]] = []
    for i, j in idx[order]:
        p = (float(grid.x[i]), float(grid.y[j]))
        if all(grid.distance(p, q) >= SITE_MERGE for q in kept):
            kept.append(p)
    return kept


def local_mass(sol: SolutionPair, q: tuple[float, float], d: float) -> float:
    """eps^-2 int_{B_d(q)} e^u1 (1 - e^u1) with the coverage-weighted ball rule."""
    if not 0 < d < 0.25:
        raise ValueError("local mass radius must lie in (0, 0.25)")
    E1 = np.exp(sol.u1)
    f = ScalarField(sol.grid, E1 * (1 - E1) / sol.params.eps**2)
    return ball_integral(f, q, d)


def site_masses(sol: SolutionPair, sites: Sequence[tuple[float, float]],
                d: float = LOCAL_MASS_RADIUS) -> list[dict]:
    """Local masses at several sites, shrinking d when the balls would overlap."""
    if len(sites) > 1:
        gap = min(sol.grid.distance(a, b) for i, a in enumerate(sites) for b in sites[i + 1:])
        if 2 * d > gap:
            warnings.warn(f"site balls overlap; shrinking d from {d} to {0.5 * gap:.3g}")
            d = 0.5 * gap
    return [{"x": p[0], "y": p[1], "d": d, "local_mass": local_mass(sol, p, d)} for p in sites]


def step_record(sol: SolutionPair, vortex_ball: float = VORTEX_BALL) -> StepRecord:
    grid = sol.grid
    eps = sol.params.eps
    u1, u2 = sol.u1, sol.u2.values
    I1, I2 = mass_integrals(sol)
    gx, gy = gradient_array(sol.v1.values, grid)
    hx, hy = gradient_array(u2, grid)
    mask = _vortex_mask(sol, vortex_ball)
    far = float(np.abs(u1[~mask]).max()) if (~mask).any() else float("nan")
    terms = integral_terms(sol)
    sites = site_masses(sol, detect_blowup_points(sol))
    si = max(1, grid.Nx // N_SAMPLES)
    sj = max(1, grid.Ny // N_SAMPLES)
    samples = (sol.v1.values[::si, ::sj] - 2 * math.log(eps)).ravel().tolist()
    return StepRecord(
        eps=eps, sigma=sol.params.sigma, I1=I1, I2=I2,
        sup_u1=float(u1.max()), sup_u2=float(u2.max()),
        sup_w1=float(u1.max() - 2 * math.log(eps)), sup_w2=float(u2.max() - 2 * math.log(eps)),
        grad_v1_scaled=float(eps * np.hypot(gx, gy).max()), grad_u2=float(np.hypot(hx, hy).max()),
        u2_inf=float(np.abs(u2).max()), far_u1=far, residual_inf=sol.residual_inf,
        newton_iters=sol.newton_iters, status=sol.status,
        d1=terms["d1"], d2=terms["d2"], rel1=terms["rel1"], rel2=terms["rel2"],
        negative=not sol.spurious, sites=sites, samples=samples,
    )


def _records(run: Sequence) -> list[StepRecord]:
    return [r if isinstance(r, StepRecord) else step_record(r) for r in run]


def _decreasing(eps: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(eps, eps[1:]))


def s1_fit(run: Sequence) -> tuple[float, float]:
    """Slope of log |u2|_inf against log eps and the fitted constant c0."""
    recs = _records(run)
    le = np.log([r.eps for r in recs])
    lu = np.log([r.u2_inf for r in recs])
    slope, icpt = np.polyfit(le, lu, 1)
    return float(slope), float(math.exp(icpt))


def classify_second(run: Sequence) -> str:
    """s1 for quadratic decay of |u2|_inf, s2 for sup w2 falling by >= 2."""
    recs = _records(run)
    if len(recs) < 4:
        raise ValueError("classify_second needs at least 4 steps")
    eps = [r.eps for r in recs]
    if not _decreasing(eps):
        return "undetermined"
    if all(r.u2_inf > 0 for r in recs):
        slope, _ = s1_fit(recs)
        ratios = [r.u2_inf / r.eps**2 for r in recs]
        if slope >= S1_SLOPE[0] and max(ratios) <= 2 * min(ratios):
            return "s1"
    w2 = [r.sup_w2 for r in recs]
    if all(b < a for a, b in zip(w2, w2[1:])) and w2[0] - w2[-1] >= 2:
        return "s2"
    return "undetermined"


def classify_first(run: Sequence) -> str:
    """f1 (far-field decay), f3 (growing peak with sites), f2 (stabilised w1 - u0)."""
    recs = _records(run)
    if len(recs) < 4:
        raise ValueError("classify_first needs at least 4 steps")
    if not _decreasing([r.eps for r in recs]):
        return "undetermined"
    first, last = recs[0], recs[-1]
    if last.far_u1 < F1_THRESHOLD and last.far_u1 <= first.far_u1:
        return "f1"
    if last.sup_w1 - first.sup_w1 >= 2 and last.sites:
        return "f3"
    prev = recs[-2]
    if abs(last.sup_w1 - prev.sup_w1) <= 0.5 and last.samples and prev.samples:
        diff = np.abs(np.asarray(last.samples) - np.asarray(prev.samples)).max()
        if diff < 0.02:
            return "f2"
    return "undetermined"


@dataclass
class PohozaevRecord:
    center: tuple[float, float]
    r: float
    m: int
    c0: float
    c1: float
    lhs: float
    rhs: float
    residual: float
    scale: float
    terms: dict

    @property
    def relative(self) -> float:
        return self.residual / self.scale if self.scale else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["relative"] = self.relative
        return d


def pohozaev_residual(
    sol: SolutionPair,
    center: tuple[float, float],
    r: float,
    second_class: str | None = None,
    n_theta: int = 512,
) -> PohozaevRecord:
    """Boundary/bulk balance from multiplying the system by x . grad.

    With phi = u1 - 2 ln eps - 4m ln|x| (m the multiplicity at the center),
    the boundary side collects the gradient terms of phi and u2, the sigma
    cross term and |x| times the potential
    E1(1 - E1/2) + E2(1 - E2/2) - c0 - sigma(E1 + E2 - E1 E2 - c1);
    the bulk side the matching disk integrals.  Disk integrals are exact for
    the trigonometric interpolant and circle values use trigonometric
    interpolation, so the residual measures the discretisation error.
    """
    grid = sol.grid
    if not 0 < r < 0.25:
        raise ValueError("Pohozaev radius must lie in (0, 0.25)")
    center = (float(center[0]) % grid.Lx, float(center[1]) % grid.Ly)
    m = 0
    clear = r + 4 * max(grid.dx, grid.dy)
    for p, mi in zip(sol.vortices.points, sol.vortices.multiplicities):
        dist = grid.distance(p, center)
        if dist < max(grid.dx, grid.dy):
            center = grid.node(grid.nearest_node(p))
            m = mi
        elif dist < clear:
            raise ValueError(f"ball B_r(center) clips the vortex at {p}")
    if second_class is None:
        second_class = "s1" if float(np.abs(sol.u2.values).max()) <= 10 * sol.params.eps**2 else "s2"
    c0, c1 = (0.5, 1.0) if second_class == "s1" else (0.0, 0.0)
    eps, s = sol.params.eps, sol.params.sigma
    k = (1 - s * s) / eps**2

    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    rx, ry = r * np.cos(theta), r * np.sin(theta)
    pts = np.column_stack([center[0] + rx, center[1] + ry])
    u1a, u2a = sol.u1, sol.u2.values
    u1 = trig_eval(u1a, grid, pts)
    u1x = trig_eval(u1a, grid, pts, (1, 0))
    u1y = trig_eval(u1a, grid, pts, (0, 1))
    u2 = trig_eval(u2a, grid, pts)
    u2x = trig_eval(u2a, grid, pts, (1, 0))
    u2y = trig_eval(u2a, grid, pts, (0, 1))
    px = u1x - 4 * m * rx / r**2
    py = u1y - 4 * m * ry / r**2
    xp = rx * px + ry * py
    xu = rx * u2x + ry * u2y
    e1, e2 = np.exp(u1), np.exp(u2)
    line = 2 * np.pi * r
    b_grad = line * np.mean(xp**2 / r - r * (px**2 + py**2) / 2 + xu**2 / r - r * (u2x**2 + u2y**2) / 2)
    b_cross = s * line * np.mean(2 * xp * xu / r - r * (px * u2x + py * u2y))
    pot = e1 * (1 - e1 / 2) + e2 * (1 - e2 / 2) - c0 - s * (e1 + e2 - e1 * e2 - c1)
    b_pot = k * line * np.mean(r * pot)

    E1, E2 = np.exp(u1a), np.exp(u2a)
    t1 = k * disk_integral(2 * E1 * (1 - E1 / 2) + 4 * m * E1 * (1 - E1), grid, center, r)
    t2 = 2 * k * disk_integral(E2 * (1 - E2 / 2) - c0 - s * (E2 - c1), grid, center, r)
    t3 = -k * disk_integral((4 * m + 2) * s * E1 * (1 - E2), grid, center, r)
    lhs = b_grad + b_cross + b_pot
    rhs = t1 + t2 + t3
    terms = {"boundary_gradient": b_grad, "boundary_cross": b_cross, "boundary_potential": b_pot,
             "bulk_first": t1, "bulk_second": t2, "bulk_cross": t3}
    return PohozaevRecord(center, r, m, c0, c1, float(lhs), float(rhs), float(abs(lhs - rhs)),
                          float(max(abs(lhs), abs(rhs))), {a: float(b) for a, b in terms.items()})


@dataclass
class GradientRecord:
    grad_v1_scaled: list
    grad_u2: list
    max_v1_scaled: float
    max_u2: float
    spread_v1: float
    spread_u2: float
    growth_v1: float
    growth_u2: float
    flag_v1: bool
    flag_u2: bool


def gradient_bounds(run: Sequence, factor: float = 3.0) -> GradientRecord:
    """Sweep summary of eps |grad v1|_inf and |grad u2|_inf.

    ``spread`` is max/min over the run; ``growth`` is max/first.  A quantity
    is flagged when its growth exceeds ``factor``.
    """
    recs = _records(run)
    if len(recs) < 3:
        raise ValueError("gradient_bounds needs at least 3 steps")
    a = [r.grad_v1_scaled for r in recs]
    b = [r.grad_u2 for r in recs]
    ga, gb = max(a) / a[0], max(b) / b[0]
    return GradientRecord(a, b, max(a), max(b), max(a) / min(a), max(b) / min(b),
                          ga, gb, ga > factor, gb > factor)


@dataclass
class DiagnosticsReport:
    steps: list[StepRecord]
    first_class: str
    second_class: str
    blowup_sites: list
    pohozaev: list
    gradients: dict | None
    s1_slope: float | None
    s1_constant: float | None
    n_frak: float
    area: float
    total_multiplicity: int

    def to_dict(self) -> dict:
        return {
            "first_class": self.first_class, "second_class": self.second_class,
            "blowup_sites": self.blowup_sites, "pohozaev": self.pohozaev,
            "gradients": self.gradients, "s1_slope": self.s1_slope,
            "s1_constant": self.s1_constant, "n_frak": self.n_frak, "area": self.area,
            "total_multiplicity": self.total_multiplicity,
            "steps": [asdict(s) for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticsReport":
        return cls([StepRecord.from_dict(s) for s in d["steps"]], d["first_class"],
                   d["second_class"], d["blowup_sites"], d["pohozaev"], d["gradients"],
                   d["s1_slope"], d["s1_constant"], d["n_frak"], d["area"],
                   d["total_multiplicity"])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_csv(self, path: str | Path) -> None:
        cols = ["eps", "sigma", "I1", "I2", "sup_u1", "sup_u2", "sup_w1", "sup_w2",
                "grad_v1_scaled", "grad_u2", "u2_inf", "far_u1", "residual_inf", "n_sites"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols + ["first_class", "second_class"])
            for s in self.steps:
                row = [repr(float(getattr(s, c))) for c in cols[:-1]] + [len(s.sites)]
                wr.writerow(row + [self.first_class, self.second_class])


def build_report(
    run: Sequence[SolutionPair],
    pohozaev_radius: float = 0.15,
    vortex_ball: float = VORTEX_BALL,
) -> DiagnosticsReport:
    """Per-step records, labels, final-step sites and Pohozaev balances."""
    if not run:
        raise ValueError("empty run")
    recs = [step_record(s, vortex_ball) for s in run]
    try:
        second = classify_second(recs)
    except ValueError:
        second = "undetermined"
    try:
        first = classify_first(recs)
    except ValueError:
        first = "undetermined"
    slope = const = None
    if len(recs) >= 2 and all(r.u2_inf > 0 for r in recs) and _decreasing([r.eps for r in recs]):
        slope, const = s1_fit(recs)
    grads = asdict(gradient_bounds(recs)) if len(recs) >= 3 else None
    poho = []
    for sol in run:
        p = sol.vortices.points[0]
        try:
            rec = pohozaev_residual(sol, p, pohozaev_radius, second_class=second)
            poho.append({"eps": sol.params.eps, **rec.to_dict()})
        except ValueError as exc:
            poho.append({"eps": sol.params.eps, "error": str(exc)})
    last = run[-1]
    return DiagnosticsReport(recs, first, second, recs[-1].sites, poho, grads, slope, const,
                             last.params.n_frak, last.grid.area, last.vortices.total)
