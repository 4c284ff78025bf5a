"""Radial solutions of Delta w + e^w (1 - e^w) = 4 pi m delta_0 on the plane.

The ODE is integrated in t = ln r, where w_tt = -e^{2t} e^w (1 - e^w).  The
flux F = int e^w (1 - e^w) r dr and the moments int e^w r dr and
int e^{2w} r dr are carried as extra components so they share the
integrator's error control.  Beyond r_max the profile is continued by its
power-law tail, w ~ -b ln r + c with b = F - 2m.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

R0 = 1e-4
N_SAMPLES = 4000

DECAYS = "decays_to_zero"
LOG_DIVERGENT = "log_divergent"
NON_PHYSICAL = "non_physical"


@dataclass(frozen=True)
class RadialProfile:
    """A shot profile and its integral data (moments include the tail).

    ``beta`` is the flux int e^w (1 - e^w) r dr.  The far-field decay rate
    is ``decay_rate = beta - 2m``; the two agree for m = 0.
    """

    m: int
    s: float
    v0: float
    r_grid: np.ndarray = field(repr=False)
    w_values: np.ndarray = field(repr=False)
    beta: float
    r_max: float
    boundary_class: str
    int_ew: float
    int_e2w: float
    tail_fraction: float
    flags: tuple[str, ...] = ()

    @property
    def decay_rate(self) -> float:
        return self.beta - 2 * self.m

    @property
    def mass(self) -> float:
        """int_{R^2} e^w (1 - e^w) dx = 2 pi beta."""
        return 2 * np.pi * self.beta


def default_r_max(m: int, v0: float) -> float:
    return max(200.0, 1e6 * math.exp(-v0 / (2 * m + 2)))


def _integrate(m: int, v0: float, r_max: float, tol: float, dense: bool = False):
    t0, t1 = math.log(R0), math.log(r_max)
    ev = math.exp(v0)
    A = ev * (1 - ev) if m == 0 else ev
    p = 2 * m + 2
    y0 = [
        2 * m * t0 + v0 - A * R0**p / p**2,
        2 * m - A * R0**p / p,
        A * R0**p / p,
        ev * R0**p / p,
        ev * ev * R0 ** (2 * p - 2) / (2 * p - 2),
    ]

    def rhs(t, y):
        # Trial stages may overshoot; the blowup event ends the shot at w = 0.
        ew = math.exp(min(y[0], 50.0))
        e2t = math.exp(2 * t)
        f = e2t * ew * (1 - ew)
        return [y[1], -f, f, e2t * ew, e2t * ew * ew]

    def blowup(t, y):
        return y[0]

    blowup.terminal = True
    blowup.direction = 1

    def peak(t, y):
        return y[1]

    peak.direction = -1
    return solve_ivp(
        rhs, (t0, t1), y0, method="DOP853", rtol=tol, atol=tol * 1e-2,
        events=[blowup, peak], dense_output=dense,
    )


def _peak_value(m: int, v0: float, tol: float) -> float:
    sol = _integrate(m, v0, default_r_max(m, v0), tol)
    if sol.t_events[0].size:
        return 0.0
    if sol.t_events[1].size:
        return float(sol.y_events[1][0][0])
    return float(sol.y[0].max())


def v0_for_peak(m: int, s: float, tol: float = 1e-12) -> float:
    """Origin value v(0) whose profile attains its maximum w = s (m >= 1)."""
    if s >= 0:
        raise ValueError("peak value must be negative")
    f = lambda v: _peak_value(m, v, tol) - s
    lo, hi = 2 * s - 4.0, 2 * s + 4.0
    while f(lo) > 0:
        lo -= 4.0
    while f(hi) < 0:
        hi += 4.0
    return brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)


def _tails(w: float, R: float, b: float) -> tuple[float, float, float]:
    """Tail integrals beyond R of e^w(1-e^w) r, e^w r, e^{2w} r for w = w(R) - b ln(r/R)."""
    ew = math.exp(w)
    t1 = ew * R * R / (b - 2)
    t2 = ew * ew * R * R / (2 * b - 2)
    return t1 - t2, t1, t2


def shoot(
    m: int,
    s: float,
    r_max: float | None = None,
    tol: float = 1e-12,
    parametrization: str = "peak",
) -> RadialProfile:
    """Shoot the radial profile with multiplicity ``m`` at the origin.

    For m = 0, ``s = w(0)``.  For m >= 1, ``parametrization="peak"`` takes
    ``s = max_r w`` and solves for v(0) (w = 2m ln r + v); ``"origin"``
    takes ``s = v(0)`` directly.
    """
    if m < 0 or int(m) != m:
        raise ValueError("m must be a nonnegative integer")
    if m == 0 and s > 0:
        raise ValueError("for m = 0 the shooting value must satisfy s <= 0")
    if r_max is not None and r_max < 50:
        raise ValueError("r_max must be at least 50")
    if parametrization not in ("peak", "origin"):
        raise ValueError("parametrization must be 'peak' or 'origin'")
    m = int(m)

    if m == 0 and s == 0:
        R = 200.0 if r_max is None else r_max
        r = np.geomspace(R0, R, N_SAMPLES)
        return RadialProfile(0, 0.0, 0.0, r, np.zeros_like(r), 0.0, R, DECAYS, 0.0, 0.0, 0.0)

    v0 = s if (m == 0 or parametrization == "origin") else v0_for_peak(m, s, tol)
    R = default_r_max(m, v0) if r_max is None else float(r_max)
    sol = _integrate(m, v0, R, tol, dense=True)
    t_end = sol.t[-1]
    r = np.exp(np.linspace(math.log(R0), t_end, N_SAMPLES))
    w_vals = sol.sol(np.log(r))[0]

    if sol.t_events[0].size:
        w, wt, F, I1, I2 = sol.y[:, -1]
        return RadialProfile(m, float(s), float(v0), r, w_vals, float(F), float(r[-1]),
                             NON_PHYSICAL, 2 * np.pi * I1, 2 * np.pi * I2, float("nan"),
                             ("non_physical",))

    w, wt, F, I1, I2 = sol.y[:, -1]
    flags: list[str] = []
    b = F - 2 * m
    if b > 2.5:
        bc = LOG_DIVERGENT
        for _ in range(2):
            tF, _, _ = _tails(w, R, b)
            b = F + tF - 2 * m
        tF, t1, t2 = _tails(w, R, b)
        if abs(wt + b) > 1e-3 * b:
            flags.append("tail_unconverged")
    else:
        bc = DECAYS if abs(w) < 1e-3 else LOG_DIVERGENT
        tF = t1 = t2 = 0.0
        flags.append("tail_unconverged")
    beta = F + tF
    frac = abs(tF) / abs(beta) if beta else 0.0
    return RadialProfile(m, float(s), float(v0), r, w_vals, float(beta), R, bc,
                         float(2 * np.pi * (I1 + t1)), float(2 * np.pi * (I2 + t2)),
                         float(frac), tuple(flags))


def beta_of_s(s: float, r_max: float | None = None, tol: float = 1e-12) -> float:
    """Flux beta(s) of the m = 0 profile with w(0) = s < 0."""
    if not s < 0:
        raise ValueError("beta_of_s requires s < 0")
    prof = shoot(0, s, r_max, tol)
    if prof.boundary_class == NON_PHYSICAL:
        raise RuntimeError(f"non-physical shot at s={s}")
    return prof.beta


def invert_beta(target: float, tol: float = 1e-9) -> float:
    """Return s < 0 with |beta_of_s(s) - target| < tol (bracketed root search)."""
    if not target > 4:
        raise ValueError("beta takes values in (4, inf); target must exceed 4")
    f = lambda s: beta_of_s(s) - target
    lo = min(-1.0, math.log(1.5 * (target - 4.0)) - 2.0)
    while f(lo) > 0:
        lo *= 2.0
    hi = -0.5
    while f(hi) < 0:
        hi *= 0.1
        if hi > -1e-15:
            raise RuntimeError("target flux not reached before s = 0")
    s = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=300)
    if abs(f(s)) >= tol:
        raise RuntimeError(f"bisection stalled: |beta - target| = {abs(f(s)):.3e}")
    return s


@dataclass(frozen=True)
class IdentityReport:
    m: int
    s: float
    beta: float
    decay_rate: float
    lhs_e2w: float
    rhs_e2w: float
    lhs_ew: float
    rhs_ew: float
    rel_err_e2w: float
    rel_err_ew: float
    mass: float
    mass_bound: float
    bound_holds: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def lemma21_identities(profile: RadialProfile) -> IdentityReport:
    """Quadratic identities for int e^{2w} and int e^w in terms of the decay rate."""
    if profile.boundary_class != LOG_DIVERGENT:
        raise ValueError(f"identities need a log-divergent profile, got {profile.boundary_class}")
    m, b = profile.m, profile.decay_rate
    rhs2 = np.pi * (b * b - 4 * b - 4 * m * m - 8 * m)
    rhs1 = np.pi * (b * b - 2 * b - 4 * m * m - 4 * m)
    bound = 8 * np.pi * (1 + m)
    return IdentityReport(
        m, profile.s, profile.beta, b,
        profile.int_e2w, float(rhs2), profile.int_ew, float(rhs1),
        float(abs(profile.int_e2w - rhs2) / abs(rhs2)),
        float(abs(profile.int_ew - rhs1) / abs(rhs1)),
        float(profile.mass), float(bound), bool(profile.mass > bound),
    )


def far_field_slope(profile: RadialProfile, window: tuple[float, float] = (0.25, 0.5)) -> float:
    """Least-squares slope of w against -ln r on [r_max*window[0], r_max*window[1]]."""
    r, w = profile.r_grid, profile.w_values
    R = r[-1]
    sel = (r >= window[0] * R) & (r <= window[1] * R)
    if sel.sum() < 16:
        raise ValueError("regression window has fewer than 16 samples")
    x = -np.log(r[sel])
    y = w[sel]
    if np.ptp(y) < 1e-14 * max(1.0, np.abs(y).max()):
        raise ValueError("no logarithmic growth in window (zero-variance response)")
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def write_profile(prefix: str | Path, profile: RadialProfile) -> tuple[Path, Path]:
    """Write ``<prefix>.csv`` (r, w) and ``<prefix>.json`` metadata."""
    prefix = Path(prefix)
    csv_path = prefix.parent / f"{prefix.name}.csv"
    json_path = prefix.parent / f"{prefix.name}.json"
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["r", "w"])
        for r, w in zip(profile.r_grid, profile.w_values):
            wr.writerow([repr(float(r)), repr(float(w))])
    meta = {
        "m": profile.m, "s": profile.s, "v0": profile.v0, "beta": profile.beta,
        "r_max": profile.r_max, "boundary_class": profile.boundary_class,
        "flags": list(profile.flags),
    }
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path
