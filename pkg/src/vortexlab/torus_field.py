"""Doubly periodic grids, fields and spectral operators on a flat torus.

All differential operators are trigonometric (FFT based).  Fields are stored
row-major with ``values[i, j]`` sampled at ``(i * dx, j * dy)``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy.special import j1

Point = tuple[float, float]


def fft_workers() -> int:
    """Worker count for FFTs, capped by ``VORTEXLAB_THREADS``."""
    raw = os.environ.get("VORTEXLAB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            return 1
    return os.cpu_count() or 1


def rfft2(a: np.ndarray) -> np.ndarray:
    return sfft.rfft2(a, workers=fft_workers())


def irfft2(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return sfft.irfft2(a, s=shape, workers=fft_workers())


def wrap(d: np.ndarray | float, period: float) -> np.ndarray | float:
    """Map displacements to the symmetric periodic window [-L/2, L/2)."""
    return (np.asarray(d) + 0.5 * period) % period - 0.5 * period


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the rectangle [0, Lx) x [0, Ly) with periodic ends."""

    Lx: float
    Ly: float
    Nx: int
    Ny: int

    def __post_init__(self) -> None:
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError("torus periods must be positive")
        for n in (self.Nx, self.Ny):
            if int(n) != n or n < 8 or n % 2:
                raise ValueError("grid sizes must be even integers >= 8")
        object.__setattr__(self, "Nx", int(self.Nx))
        object.__setattr__(self, "Ny", int(self.Ny))
        object.__setattr__(self, "Lx", float(self.Lx))
        object.__setattr__(self, "Ly", float(self.Ly))

    @classmethod
    def square(cls, N: int, L: float = 1.0) -> "TorusGrid":
        return cls(L, L, N, N)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx, self.Ny)

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def dy(self) -> float:
        return self.Ly / self.Ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.Nx) * self.dx

    @cached_property
    def y(self) -> np.ndarray:
        return np.arange(self.Ny) * self.dy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def kx(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.Nx, d=self.dx)

    @cached_property
    def ky(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.Ny, d=self.dy)

    @cached_property
    def k2_half(self) -> np.ndarray:
        """|k|^2 on the half spectrum used by ``rfft2``."""
        ky = 2 * np.pi * np.fft.rfftfreq(self.Ny, d=self.dy)
        return self.kx[:, None] ** 2 + ky[None, :] ** 2

    def nearest_node(self, p: Point) -> tuple[int, int]:
        i = int(np.rint(p[0] / self.dx)) % self.Nx
        j = int(np.rint(p[1] / self.dy)) % self.Ny
        return i, j

    def node(self, ij: tuple[int, int]) -> Point:
        return (ij[0] * self.dx, ij[1] * self.dy)

    def distance(self, a: Point, b: Point) -> float:
        """Shortest periodic distance between two points."""
        return float(np.hypot(wrap(a[0] - b[0], self.Lx), wrap(a[1] - b[1], self.Ly)))

    def to_dict(self) -> dict:
        return {"Lx": self.Lx, "Ly": self.Ly, "Nx": self.Nx, "Ny": self.Ny}


@dataclass(frozen=True)
class ScalarField:
    """Immutable real field on a torus grid."""

    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def mean(self) -> float:
        return float(self.values.mean())

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)

    def max(self) -> float:
        return float(self.values.max())

    def norm_inf(self) -> float:
        return float(np.abs(self.values).max())

    def norm_l2(self) -> float:
        return float(np.sqrt((self.values**2).sum() * self.grid.cell_area))


@dataclass(frozen=True)
class VortexSet:
    """Vortex points with positive integer multiplicities."""

    points: tuple[Point, ...]
    multiplicities: tuple[int, ...]

    def __post_init__(self) -> None:
        pts = tuple((float(p[0]), float(p[1])) for p in self.points)
        ms = tuple(self.multiplicities)
        if len(pts) != len(ms) or not pts:
            raise ValueError("need at least one vortex and one multiplicity per point")
        for m in ms:
            if int(m) != m or m < 1:
                raise ValueError("multiplicities must be integers >= 1")
        if len(set(pts)) != len(pts):
            raise ValueError("vortex points must be pairwise distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "multiplicities", tuple(int(m) for m in ms))

    @property
    def total(self) -> int:
        return sum(self.multiplicities)

    def check_grid(self, grid: TorusGrid) -> None:
        for x, y in self.points:
            if not (0 <= x < grid.Lx and 0 <= y < grid.Ly):
                raise ValueError(f"vortex ({x}, {y}) outside [0,Lx)x[0,Ly)")
        nodes = {grid.nearest_node(p) for p in self.points}
        if len(nodes) != len(self.points):
            raise ValueError("two vortices share a grid node")

    def to_list(self) -> list[dict]:
        return [{"x": p[0], "y": p[1], "m": m} for p, m in zip(self.points, self.multiplicities)]


def _same_grid(*fields: ScalarField) -> TorusGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError("grid mismatch between fields")
    return grid


# ---------------------------------------------------------------- array kernels
def lap_array(a: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Spectral Laplacian of a raw array (mean removed first to limit roundoff)."""
    return irfft2(-grid.k2_half * rfft2(a - a.mean()), grid.shape)


def poisson_array(f: np.ndarray, grid: TorusGrid) -> np.ndarray:
    fh = rfft2(f)
    k2 = grid.k2_half
    out = np.zeros_like(fh)
    nz = k2 > 0
    out[nz] = -fh[nz] / k2[nz]
    return irfft2(out, grid.shape)


def screened_array(g: np.ndarray, grid: TorusGrid, shift: float) -> np.ndarray:
    """Solve (Delta - shift) S = g for shift > 0."""
    return irfft2(rfft2(g) / (-grid.k2_half - shift), grid.shape)


def gradient_array(a: np.ndarray, grid: TorusGrid) -> tuple[np.ndarray, np.ndarray]:
    """Spectral gradient; Nyquist modes are dropped for the odd derivative."""
    ah = rfft2(a)
    kx = grid.kx.copy()
    kx[grid.Nx // 2] = 0.0
    ky = 2 * np.pi * np.fft.rfftfreq(grid.Ny, d=grid.dy)
    ky[-1] = 0.0
    gx = irfft2(1j * kx[:, None] * ah, grid.shape)
    gy = irfft2(1j * ky[None, :] * ah, grid.shape)
    return gx, gy


def delta_source(grid: TorusGrid, vortices: VortexSet, taper: float | None = None) -> np.ndarray:
    """Half-spectrum of sum m_i delta_{p_i} (nearest-node masses of weight 1/h).

    With ``taper`` set, the node masses are convolved with a Gaussian of width
    ``taper * max(dx, dy)``; the total mass is unchanged.
    """
    d = np.zeros(grid.shape)
    for p, m in zip(vortices.points, vortices.multiplicities):
        d[grid.nearest_node(p)] += m / grid.cell_area
    dh = rfft2(d)
    if taper:
        w = taper * max(grid.dx, grid.dy)
        dh = dh * np.exp(-0.5 * grid.k2_half * w * w)
    return dh


def trig_eval(
    a: np.ndarray, grid: TorusGrid, points: np.ndarray, deriv: tuple[int, int] = (0, 0)
) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``a`` (or a derivative) at points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = sfft.fft2(a, workers=fft_workers()) / a.size
    kx = grid.kx.copy()
    ky = grid.ky.copy()
    if deriv[0] % 2:
        kx[grid.Nx // 2] = 0.0
    if deriv[1] % 2:
        ky[grid.Ny // 2] = 0.0
    c = c * ((1j * kx[:, None]) ** deriv[0]) * ((1j * ky[None, :]) ** deriv[1])
    out = np.empty(len(pts))
    for s in range(0, len(pts), 256):
        p = pts[s : s + 256]
        ex = np.exp(1j * np.outer(p[:, 0], kx))
        ey = np.exp(1j * np.outer(p[:, 1], ky))
        out[s : s + 256] = ((ex @ c) * ey).sum(axis=1).real
    return out


def disk_integral(a: np.ndarray, grid: TorusGrid, center: Point, radius: float) -> float:
    """Integral of the trigonometric interpolant of ``a`` over a disk.

    Uses the closed-form disk transform 2 pi r J1(|k| r) / |k| per mode, so the
    result is exact for band-limited data.
    """
    c = sfft.fft2(a, workers=fft_workers()) / a.size
    kk = np.sqrt(grid.kx[:, None] ** 2 + grid.ky[None, :] ** 2)
    kernel = np.empty_like(kk)
    nz = kk > 0
    kernel[nz] = 2 * np.pi * radius * j1(kk[nz] * radius) / kk[nz]
    kernel[~nz] = np.pi * radius**2
    phase = np.exp(1j * (grid.kx[:, None] * center[0] + grid.ky[None, :] * center[1]))
    return float((c * phase * kernel).sum().real)


# ---------------------------------------------------------------- public operations
def laplacian(f: ScalarField) -> ScalarField:
    """Spectral Laplacian, exact for trigonometric polynomials below Nyquist."""
    return ScalarField(f.grid, lap_array(f.values, f.grid))


def solve_poisson_meanzero(f: ScalarField) -> ScalarField:
    """Return the mean-zero u with Delta u = f - mean(f)."""
    return ScalarField(f.grid, poisson_array(f.values, f.grid))


def green_function(grid: TorusGrid, y: Point) -> ScalarField:
    """Mean-zero discrete Green's function with -Delta G = delta_y - 1/|T|.

    The delta is a point mass 1/h at the node nearest to ``y``.
    """
    vs = VortexSet(((float(y[0]) % grid.Lx, float(y[1]) % grid.Ly),), (1,))
    dh = delta_source(grid, vs)
    k2 = grid.k2_half
    gh = np.zeros_like(dh)
    nz = k2 > 0
    gh[nz] = dh[nz] / k2[nz]
    return ScalarField(grid, irfft2(gh, grid.shape))


def regular_part(grid: TorusGrid, y: Point, x: Point, extrapolate: bool = False) -> float:
    """gamma(x, y) = G(x, y) + (1/2pi) ln|x - y| from the discrete Green's function.

    ``y`` is snapped to its nearest node (the delta location).  At ``x == y``
    the value is only available with ``extrapolate=True``, which linearly
    extrapolates from offsets 4h and 2h along the x axis.
    """
    yn = grid.node(grid.nearest_node(y))
    r = grid.distance(x, yn)
    if r < 1e-12 * max(grid.Lx, grid.Ly):
        if not extrapolate:
            raise ValueError("x coincides with y; pass extrapolate=True")
        g2 = regular_part(grid, yn, (yn[0] + 2 * grid.dx, yn[1]))
        g4 = regular_part(grid, yn, (yn[0] + 4 * grid.dx, yn[1]))
        return 2 * g2 - g4
    G = green_function(grid, yn)
    gx = trig_eval(G.values, grid, np.array([x]))[0]
    return float(gx + np.log(r) / (2 * np.pi))


def background_u0(grid: TorusGrid, vortices: VortexSet, taper: float | None = None) -> ScalarField:
    """u0 = -8 pi sum m_i G(x, p_i), mean zero.

    ``taper`` (in cells) smooths the node deltas with a Gaussian; ``None``
    keeps the bare nearest-node masses.
    """
    vortices.check_grid(grid)
    dh = delta_source(grid, vortices, taper)
    k2 = grid.k2_half
    uh = np.zeros_like(dh)
    nz = k2 > 0
    uh[nz] = -8 * np.pi * dh[nz] / k2[nz]
    return ScalarField(grid, irfft2(uh, grid.shape))


@dataclass(frozen=True)
class ScreenedSolution:
    """Solution of Delta S - S/eps^2 = g with the uniform-estimate ratios."""

    field: ScalarField
    eps: float
    ratio_l2: float
    ratio_inf: float


def solve_screened(g: ScalarField, eps: float) -> ScreenedSolution:
    """Invert L = Delta - 1/eps^2 mode by mode.

    ``ratio_l2 = |S|_inf / (eps |g|_2)`` and ``ratio_inf = |S|_inf / (eps^2 |g|_inf)``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    S = ScalarField(g.grid, screened_array(g.values, g.grid, 1.0 / eps**2))
    s_inf = S.norm_inf()
    g2, ginf = g.norm_l2(), g.norm_inf()
    r2 = s_inf / (eps * g2) if g2 > 0 else 0.0
    rinf = s_inf / (eps**2 * ginf) if ginf > 0 else 0.0
    return ScreenedSolution(S, eps, r2, rinf)


def ball_integral(f: ScalarField, center: Point, radius: float, subsample: int = 4) -> float:
    """Integral of f over the periodic disk B_radius(center).

    Interior cells count fully; cells cut by the circle are weighted by the
    fraction of a ``subsample x subsample`` lattice of points inside.
    """
    grid = f.grid
    if not 0 < radius < 0.5 * min(grid.Lx, grid.Ly):
        raise ValueError("radius must be positive and below half the shorter period")
    dxs = wrap(grid.x - center[0], grid.Lx)
    dys = wrap(grid.y - center[1], grid.Ly)
    half = 0.5 * np.hypot(grid.dx, grid.dy)
    ix = np.nonzero(np.abs(dxs) <= radius + half)[0]
    iy = np.nonzero(np.abs(dys) <= radius + half)[0]
    DX, DY = np.meshgrid(dxs[ix], dys[iy], indexing="ij")
    dist = np.hypot(DX, DY)
    weight = (dist <= radius - half).astype(float)
    edge = (dist > radius - half) & (dist < radius + half)
    offs = (np.arange(subsample) + 0.5) / subsample - 0.5
    ox, oy = np.meshgrid(offs * grid.dx, offs * grid.dy, indexing="ij")
    ex, ey = DX[edge], DY[edge]
    inside = np.hypot(ex[:, None] + ox.ravel(), ey[:, None] + oy.ravel()) <= radius
    weight[edge] = inside.mean(axis=1)
    return float((f.values[np.ix_(ix, iy)] * weight).sum() * grid.cell_area)


# ---------------------------------------------------------------- dump format
def write_field(path: str | Path, f: ScalarField, name: str) -> None:
    """Binary dump: one JSON header line, then little-endian float64 row-major."""
    header = json.dumps({**f.grid.to_dict(), "name": name}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode() + b"\n")
        fh.write(f.values.astype("<f8").tobytes(order="C"))


def read_field(path: str | Path) -> tuple[ScalarField, str]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        raw = fh.read()
    grid = TorusGrid(header["Lx"], header["Ly"], header["Nx"], header["Ny"])
    if len(raw) != 8 * grid.Nx * grid.Ny:
        raise ValueError(f"corrupt field dump {path}: wrong payload size")
    vals = np.frombuffer(raw, dtype="<f8").reshape(grid.shape)
    return ScalarField(grid, vals), header["name"]


def write_field_csv(path: str | Path, f: ScalarField) -> None:
    X, Y = f.grid.mesh()
    data = np.column_stack([X.ravel(), Y.ravel(), f.values.ravel()])
    np.savetxt(path, data, delimiter=",", header="x,y,value", comments="", fmt="%.17g")


def read_field_csv(path: str | Path, grid: TorusGrid) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return ScalarField(grid, data[:, 2].reshape(grid.shape))


def vortex_set(entries: Sequence[dict]) -> VortexSet:
    return VortexSet(tuple((e["x"], e["y"]) for e in entries), tuple(e["m"] for e in entries))
