"""Executing configured runs and persisting them (fields, manifest, report)."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .asymptotics import DiagnosticsReport, StepRecord, build_report
from .config import RunConfig
from .gudnason_solver import ContinuationResult, CouplingParams, SolutionPair, continuation
from .torus_field import read_field, vortex_set, write_field

MASS_TOL = 1e-6
IDENTITY_RTOL = 1e-6


def invariant_checks(rec: StepRecord, n_frak: float, area: float, total: int) -> list[dict]:
    """Per-step checks.  ``gating`` checks decide the exit status.

    The I1 <= 8 pi M comparison is reported but not gating: combining the two
    integrated equations gives I1 = 8 pi M / (1 - sigma^2) + sigma/eps^2
    int e^u1 (1 - e^u2), which exceeds 8 pi M whenever sigma > 0.
    """
    cap2 = 2 * n_frak * area
    cap1 = 8 * math.pi * total
    return [
        {"name": "negativity", "value": max(rec.sup_u1, rec.sup_u2), "limit": 0.0,
         "passed": rec.sup_u1 < 0 and rec.sup_u2 < 0, "gating": True},
        {"name": "I2_bound", "value": rec.I2, "limit": cap2 + MASS_TOL,
         "passed": rec.I2 <= cap2 + MASS_TOL, "gating": True},
        {"name": "integral_line1", "value": rec.rel1, "limit": IDENTITY_RTOL,
         "passed": rec.rel1 <= IDENTITY_RTOL, "gating": True},
        {"name": "integral_line2", "value": rec.rel2, "limit": IDENTITY_RTOL,
         "passed": rec.rel2 <= IDENTITY_RTOL, "gating": True},
        {"name": "I1_bound", "value": rec.I1, "limit": cap1 + MASS_TOL,
         "passed": rec.I1 <= cap1 + MASS_TOL, "gating": False},
    ]


@dataclass
class RunOutcome:
    config: RunConfig
    result: ContinuationResult
    report: DiagnosticsReport | None
    checks: list[list[dict]]
    elapsed: float

    @property
    def invariants_ok(self) -> bool:
        return all(c["passed"] for step in self.checks for c in step if c["gating"])


def execute(cfg: RunConfig, single: bool = False) -> RunOutcome:
    """Run the configured continuation (or only its first step)."""
    t0 = time.perf_counter()
    schedule = cfg.schedule[:1] if single else cfg.schedule
    result = continuation(
        schedule, cfg.seed, cfg.vortices, cfg.grid, cfg.tol, cfg.max_iters,
        taper=cfg.taper, preconditioner=cfg.preconditioner,
        bubble_center=cfg.bubble_center, bubble_margin=cfg.bubble_margin,
    )
    report = None
    checks: list[list[dict]] = []
    if result.solutions:
        report = build_report(result.solutions, cfg.pohozaev_radius, cfg.vortex_ball)
        checks = [invariant_checks(r, cfg.n_frak, cfg.grid.area, cfg.vortices.total)
                  for r in report.steps]
    return RunOutcome(cfg, result, report, checks, time.perf_counter() - t0)


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save(outcome: RunOutcome, out_dir: str | Path) -> Path:
    """Write manifest.json, field dumps, report.json/csv and timing.json."""
    out = Path(out_dir)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    cfg = outcome.config
    steps = []
    for k, step in enumerate(outcome.result.steps):
        entry = dict(step)
        if step["converged"]:
            sol = outcome.result.solutions[k]
            files = {"v1": f"fields/step_{k:02d}_v1.bin", "u2": f"fields/step_{k:02d}_u2.bin"}
            write_field(out / files["v1"], sol.v1, "v1")
            write_field(out / files["u2"], sol.u2, "u2")
            entry["files"] = files
            entry["params"] = sol.params.to_dict()
            entry["checks"] = outcome.checks[k]
        steps.append(entry)
    if outcome.result.solutions:
        write_field(out / "fields" / "u0.bin", outcome.result.solutions[0].u0, "u0")
    manifest = {
        "run_id": cfg.run_id,
        "version": __version__,
        "config": cfg.canonical(),
        "completed": outcome.result.completed,
        "failed_step": outcome.result.failed_step,
        "invariants_ok": outcome.invariants_ok,
        "steps": steps,
    }
    _dump(manifest, out / "manifest.json")
    if outcome.report is not None:
        outcome.report.write_json(out / "report.json")
        outcome.report.write_csv(out / "report.csv")
    _dump({"elapsed_seconds": outcome.elapsed,
           "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())},
          out / "timing.json")
    return out


def load(run_dir: str | Path) -> tuple[dict, list[SolutionPair]]:
    """Rebuild the converged SolutionPairs of a saved run."""
    run_dir = Path(run_dir)
    path = run_dir / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.json in {run_dir}")
    manifest = json.loads(path.read_text())
    cfg = manifest["config"]
    vs = vortex_set(cfg["vortices"])
    u0, _ = read_field(run_dir / "fields" / "u0.bin")
    sols = []
    for step in manifest["steps"]:
        if not step.get("converged"):
            continue
        p = step["params"]
        params = CouplingParams(p["alpha"], p["beta_c"], p["eps"], p["sigma"], p["n_frak"])
        v1, _ = read_field(run_dir / step["files"]["v1"])
        u2, _ = read_field(run_dir / step["files"]["u2"])
        if v1.grid != u0.grid or u2.grid != u0.grid:
            raise ValueError("field dumps disagree on the grid")
        sols.append(SolutionPair(params, vs, v1, u2, u0, step["residual_inf"],
                                 step["newton_iters"], cfg["seed"], True, step["status"],
                                 tuple(step["trace"])))
    if not sols:
        raise ValueError(f"run {run_dir} has no converged steps")
    return manifest, sols


def rebuild_report(run_dir: str | Path) -> tuple[dict, list[SolutionPair], DiagnosticsReport]:
    manifest, sols = load(run_dir)
    cfg = manifest["config"]
    report = build_report(sols, cfg["pohozaev_radius"], cfg["vortex_ball"])
    return manifest, sols, report

