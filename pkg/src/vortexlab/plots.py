"""Static figures (PNG or SVG) for radial tables, fields and run reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .asymptotics import DiagnosticsReport  # noqa: E402
from .gudnason_solver import SolutionPair  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if path.suffix == ".svg" else {"Software": None}
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=meta)
    plt.close(fig)
    return path


def plot_beta(rows: Sequence[dict], path: Path) -> Path:
    """Flux beta against shooting value, one line per multiplicity."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m in sorted({r["m"] for r in rows}):
        sel = sorted((r["s"], r["beta"]) for r in rows if r["m"] == m)
        s, b = zip(*sel)
        ax.plot(s, b, "o-", label=f"m = {m}")
        ax.axhline(4 * (1 + m), ls=":", lw=0.8, color="gray")
    ax.set_xlabel("s")
    ax.set_ylabel(r"$\beta(s)$")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_fields(sol: SolutionPair, path: Path) -> Path:
    g = sol.grid
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    ext = (0, g.Lx, 0, g.Ly)
    for ax, data, name in ((axes[0], sol.u1, "$u_1$"), (axes[1], sol.u2.values, "$u_2$")):
        im = ax.imshow(data.T, origin="lower", extent=ext, cmap="viridis")
        ax.set_title(f"{name}, eps = {sol.params.eps:.4g}")
        fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def plot_u2_scaling(report: DiagnosticsReport, path: Path) -> Path:
    eps = np.array([s.eps for s in report.steps])
    u2 = np.array([s.u2_inf for s in report.steps])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.loglog(eps, u2, "o", label=r"$\|u_2\|_\infty$")
    if report.s1_slope is not None:
        ax.loglog(eps, report.s1_constant * eps**report.s1_slope, "-",
                  label=f"fit slope {report.s1_slope:.3f}")
    ax.set_xlabel(r"$\varepsilon$")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_masses(report: DiagnosticsReport, path: Path) -> Path:
    """I1 and any site local masses against eps, with the 8 pi reference."""
    eps = [s.eps for s in report.steps]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(eps, [s.I1 for s in report.steps], "o-", label="$I_1$")
    for s in report.steps:
        for site in s.sites:
            ax.plot(s.eps, site["local_mass"], "s", color="C3")
    ax.axhline(8 * np.pi * report.total_multiplicity, ls=":", color="gray", label=r"$8\pi\mathfrak{M}$")
    ax.set_xlabel(r"$\varepsilon$")
    ax.legend(frameon=False)
    return _save(fig, path)
