"""Run configuration: parsing, validation and deterministic run ids."""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .gudnason_solver import (
    CONCENTRATING,
    DEFAULT_TAPER,
    DEFAULT_TOL,
    TOPOLOGICAL,
    CouplingParams,
)
from .torus_field import TorusGrid, VortexSet

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass(frozen=True)
class RunConfig:
    grid: TorusGrid
    vortices: VortexSet
    schedule: tuple[CouplingParams, ...]
    n_frak: float
    seed: str = TOPOLOGICAL
    tol: float = DEFAULT_TOL
    max_iters: int = 40
    preconditioner: str | None = None
    taper: float | None = DEFAULT_TAPER
    vortex_ball: float = 0.1
    pohozaev_radius: float = 0.15
    bubble_center: tuple[float, float] | None = None
    bubble_margin: float = 0.05
    out: str | None = None
    plot: str | None = None

    def canonical(self) -> dict:
        """Normalised content that determines the numerical results."""
        return {
            "grid": self.grid.to_dict(),
            "vortices": self.vortices.to_list(),
            "schedule": [p.to_dict() for p in self.schedule],
            "n_frak": self.n_frak,
            "seed": self.seed,
            "tol": self.tol,
            "max_iters": self.max_iters,
            "preconditioner": self.preconditioner,
            "taper": self.taper,
            "vortex_ball": self.vortex_ball,
            "pohozaev_radius": self.pohozaev_radius,
            "bubble_center": list(self.bubble_center) if self.bubble_center else None,
            "bubble_margin": self.bubble_margin,
        }

    @property
    def run_id(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            return tomllib.loads(raw.decode())
        if suffix == ".json":
            return json.loads(raw.decode())
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    raise ConfigError(f"unsupported config extension {suffix!r} (use .toml or .json)")


def parse_grid_spec(spec: Any, base: TorusGrid | None = None) -> TorusGrid:
    """Grid from a table, or from a string like '256' or '256x128' (keeps periods)."""
    try:
        if isinstance(spec, str):
            parts = spec.lower().split("x")
            nx = int(parts[0])
            ny = int(parts[1]) if len(parts) > 1 else nx
            lx = base.Lx if base else 1.0
            ly = base.Ly if base else 1.0
            return TorusGrid(lx, ly, nx, ny)
        if "N" in spec:
            L = float(spec.get("L", 1.0))
            return TorusGrid(float(spec.get("Lx", L)), float(spec.get("Ly", L)), spec["N"], spec["N"])
        return TorusGrid(float(spec.get("Lx", 1.0)), float(spec.get("Ly", 1.0)), spec["Nx"], spec["Ny"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid grid spec {spec!r}: {exc}") from exc


def _schedule(spec: Any, n_frak: float) -> tuple[CouplingParams, ...]:
    out: list[CouplingParams] = []
    if isinstance(spec, list):
        for e in spec:
            if "alpha" in e:
                s = e["alpha"] + e["beta_c"]
                out.append(CouplingParams(e["alpha"], e["beta_c"], 1.0 / s,
                                          (e["beta_c"] - e["alpha"]) / s, n_frak))
            else:
                out.append(CouplingParams.from_eps_sigma(e["eps"], e["sigma"], n_frak))
        return tuple(out)
    steps = int(spec["steps"])
    a, b = float(spec["eps_start"]), float(spec["eps_end"])
    if steps < 1:
        raise ConfigError("schedule needs at least one step")
    spacing = spec.get("spacing", "geometric")
    rule = spec.get("sigma_rule", "n_frak_eps2")
    if isinstance(rule, str):
        rule = {"kind": rule}
    if rule.get("kind") != "n_frak_eps2":
        raise ConfigError(f"unknown sigma_rule {rule!r}")
    scale = float(rule.get("scale", 1.0))
    for k in range(steps):
        t = k / (steps - 1) if steps > 1 else 0.0
        if spacing == "geometric":
            eps = math.exp((1 - t) * math.log(a) + t * math.log(b))
        elif spacing == "linear":
            eps = (1 - t) * a + t * b
        else:
            raise ConfigError(f"unknown spacing {spacing!r}")
        out.append(CouplingParams.from_eps_sigma(eps, scale * n_frak * eps * eps, n_frak))
    return tuple(out)


def parse_config(
    data: dict,
    grid: str | None = None,
    tol: float | None = None,
    out: str | None = None,
    plot: str | None = None,
) -> RunConfig:
    """Validate a config mapping; command-line overrides win over file values."""
    try:
        g = parse_grid_spec(data.get("grid", {"N": 256, "L": 1.0}))
        if grid:
            g = parse_grid_spec(grid, g)
        vs = VortexSet(tuple((v["x"], v["y"]) for v in data["vortices"]),
                       tuple(v["m"] for v in data["vortices"]))
        vs.check_grid(g)
        n_frak = float(data["n_frak"])
        schedule = _schedule(data["schedule"], n_frak)
        for a, b in zip(schedule, schedule[1:]):
            if not b.eps < a.eps:
                raise ConfigError("schedule must be strictly decreasing in eps")
        seed = data.get("seed", TOPOLOGICAL)
        if seed not in (TOPOLOGICAL, CONCENTRATING):
            raise ConfigError(f"unknown seed {seed!r}")
        center = data.get("bubble_center")
        cfg = RunConfig(
            grid=g, vortices=vs, schedule=schedule, n_frak=n_frak, seed=seed,
            tol=float(tol if tol is not None else data.get("tol", DEFAULT_TOL)),
            max_iters=int(data.get("max_iters", 40)),
            preconditioner=data.get("preconditioner"),
            taper=data.get("taper", DEFAULT_TAPER),
            vortex_ball=float(data.get("vortex_ball", 0.1)),
            pohozaev_radius=float(data.get("pohozaev_radius", 0.15)),
            bubble_center=tuple(center) if center else None,
            bubble_margin=float(data.get("bubble_margin", 0.05)),
            out=out if out is not None else data.get("out"),
            plot=plot if plot is not None else data.get("plot"),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if not cfg.tol > 0:
        raise ConfigError("tol must be positive")
    return cfg


def load_config(path: str | Path, **overrides) -> RunConfig:
    return parse_config(read_config_file(path), **overrides)
