"""Command-line front end: ``vortexlab radial|solve|continue|classify|report``.

Tables go to stdout as CSV.  Failures print one JSON object
{code, stage, message} on stderr.  Exit codes: 0 ok, 1 config/usage,
2 solver non-convergence, 3 invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
from pathlib import Path
from typing import Sequence

from . import plots
from .asymptotics import DiagnosticsReport
from .config import ConfigError, load_config
from .radial_limit import LOG_DIVERGENT, lemma21_identities, shoot, write_profile
from .runs import RunOutcome, execute, rebuild_report, save

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_INVARIANT = 0, 1, 2, 3
IDENTITY_RTOL = 1e-4


class CliError(Exception):
    def __init__(self, code: int, stage: str, message: str) -> None:
        super().__init__(message)
        self.code, self.stage, self.message = code, stage, message


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise CliError(EXIT_CONFIG, "usage", message)


def _emit_error(err: CliError) -> int:
    sys.stderr.write(json.dumps({"code": err.code, "stage": err.stage, "message": err.message}) + "\n")
    return err.code


def _csv(rows: list[dict], cols: Sequence[str]) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=list(cols), extrasaction="ignore", lineterminator="\n")
    wr.writeheader()
    wr.writerows(rows)
    return buf.getvalue()


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, "usage", f"cannot parse number list {text!r}") from exc


# ---------------------------------------------------------------- radial
RADIAL_COLS = ("m", "s", "v0", "beta", "decay_rate", "boundary_class", "rel_err_e2w",
               "rel_err_ew", "mass", "mass_bound", "bound_holds", "flags")


def cmd_radial(args) -> int:
    m = args.m
    s_list = _floats(args.s)
    if m < 0:
        raise CliError(EXIT_CONFIG, "usage", "m must be nonnegative")
    if m == 0 and any(s > 0 for s in s_list):
        raise CliError(EXIT_CONFIG, "usage", "for m = 0 every s must satisfy s <= 0")
    if m >= 1 and any(s >= 0 for s in s_list):
        raise CliError(EXIT_CONFIG, "usage", "for m >= 1 the peak value s must be negative")
    tol = args.tol if args.tol is not None else 1e-12
    rows, failed = [], []
    out = Path(args.out) if args.out else None
    if out:
        (out / "profiles").mkdir(parents=True, exist_ok=True)
    for s in s_list:
        prof = shoot(m, s, args.r_max, tol)
        row = {"m": m, "s": s, "v0": prof.v0, "beta": prof.beta, "decay_rate": prof.decay_rate,
               "boundary_class": prof.boundary_class, "flags": ";".join(prof.flags)}
        if prof.boundary_class == LOG_DIVERGENT:
            rep = lemma21_identities(prof)
            row.update(rel_err_e2w=rep.rel_err_e2w, rel_err_ew=rep.rel_err_ew, mass=rep.mass,
                       mass_bound=rep.mass_bound, bound_holds=rep.bound_holds)
            if max(rep.rel_err_e2w, rep.rel_err_ew) > IDENTITY_RTOL or not rep.bound_holds:
                failed.append(s)
        rows.append(row)
        if out:
            write_profile(out / "profiles" / f"m{m}_s{s:+.6g}", prof)
    table = _csv(rows, RADIAL_COLS)
    sys.stdout.write(table)
    if out:
        (out / "beta_table.csv").write_text(table)
        (out / "identities.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
        if args.plot:
            plots.plot_beta(rows, out / f"beta_vs_s.{args.plot}")
    if failed:
        raise CliError(EXIT_INVARIANT, "radial",
                       f"identity or mass bound failed beyond {IDENTITY_RTOL} at s = {failed}")
    return EXIT_OK


# ---------------------------------------------------------------- runs
SUMMARY_COLS = ("eps", "sigma", "status", "residual_inf", "newton_iters", "I1", "I2",
                "sup_u1", "sup_u2", "u2_inf", "grad_v1_scaled", "grad_u2", "n_sites")


def _summary_rows(report: DiagnosticsReport) -> list[dict]:
    rows = []
    for s in report.steps:
        d = {c: getattr(s, c) for c in SUMMARY_COLS if hasattr(s, c)}
        d["n_sites"] = len(s.sites)
        rows.append(d)
    return rows


def _render(report: DiagnosticsReport, sols, out: Path, fmt: str) -> None:
    fig = out / "figures"
    plots.plot_fields(sols[-1], fig / f"fields_final.{fmt}")
    plots.plot_masses(report, fig / f"masses.{fmt}")
    if len(report.steps) >= 2 and report.s1_slope is not None:
        plots.plot_u2_scaling(report, fig / f"u2_scaling.{fmt}")


def _load_cfg(args):
    if not args.config:
        raise CliError(EXIT_CONFIG, "config", "--config is required")
    try:
        return load_config(args.config, grid=args.grid, tol=args.tol, out=args.out, plot=args.plot)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc)) from exc


def _finish(outcome: RunOutcome) -> int:
    cfg = outcome.config
    out = Path(cfg.out) if cfg.out else Path("runs") / cfg.run_id
    try:
        save(outcome, out)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, "output", f"cannot write to {out}: {exc}") from exc
    if outcome.report is not None:
        sys.stdout.write(_csv(_summary_rows(outcome.report), SUMMARY_COLS))
        sys.stdout.write(f"# first_class={outcome.report.first_class} "
                         f"second_class={outcome.report.second_class} run_dir={out}\n")
        if cfg.plot:
            _render(outcome.report, outcome.result.solutions, out, cfg.plot)
    if not outcome.result.completed:
        k = outcome.result.failed_step
        step = outcome.result.steps[k]
        raise CliError(EXIT_CONVERGENCE, "solve",
                       f"step {k} (eps={step['eps']:.6g}) did not converge: {step['status']}, "
                       f"residual {step['residual_inf']:.3e}")
    if not outcome.invariants_ok:
        bad = sorted({c["name"] for st in outcome.checks for c in st if c["gating"] and not c["passed"]})
        raise CliError(EXIT_INVARIANT, "invariants", f"invariant checks failed: {bad}")
    return EXIT_OK


def cmd_solve(args) -> int:
    return _finish(execute(_load_cfg(args), single=True))


def cmd_continue(args) -> int:
    return _finish(execute(_load_cfg(args)))


def _run_dir(args) -> Path:
    d = args.run_dir or args.out
    if not d:
        raise CliError(EXIT_CONFIG, "usage", "a run directory is required")
    return Path(d)


def _rebuild(run_dir: Path):
    try:
        return rebuild_report(run_dir)
    except (FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, "load", str(exc)) from exc


def cmd_classify(args) -> int:
    run_dir = _run_dir(args)
    manifest, sols, report = _rebuild(run_dir)
    summary = {
        "run_id": manifest["run_id"], "first_class": report.first_class,
        "second_class": report.second_class, "s1_slope": report.s1_slope,
        "final_eps": report.steps[-1].eps, "final_I1": report.steps[-1].I1,
        "final_I2": report.steps[-1].I2, "blowup_sites": report.blowup_sites,
    }
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir) if args.run_dir else None
    if run_dir is None:
        raise CliError(EXIT_CONFIG, "usage", "report needs a run directory")
    manifest, sols, report = _rebuild(run_dir)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    sys.stdout.write(_csv(_summary_rows(report), SUMMARY_COLS))
    if args.plot:
        _render(report, sols, out, args.plot)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run config (.toml or .json)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--plot", nargs="?", const="png", choices=("png", "svg"),
                        help="write figures (png default)")
    common.add_argument("--tol", type=float, help="solver tolerance override")
    common.add_argument("--grid", help="grid override, e.g. 256 or 256x128")

    p = _Parser(prog="vortexlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("radial", parents=[common], help="radial profiles and flux table")
    r.add_argument("--m", type=int, default=0)
    r.add_argument("--s", required=True, help="comma-separated shooting values")
    r.add_argument("--r-max", type=float, default=None)
    r.set_defaults(func=cmd_radial)
    for name, fn, text in (("solve", cmd_solve, "solve the first schedule entry"),
                           ("continue", cmd_continue, "continuation over the schedule")):
        q = sub.add_parser(name, parents=[common], help=text)
        q.set_defaults(func=fn)
    for name, fn, text in (("classify", cmd_classify, "relabel a saved run"),
                           ("report", cmd_report, "rebuild report and figures")):
        q = sub.add_parser(name, parents=[common], help=text)
        q.add_argument("run_dir", nargs="?")
        q.set_defaults(func=fn)
    return p


_NUMLIST = re.compile(r"^-[\d.]")


def _join_negative_values(argv: list[str]) -> list[str]:
    """Let ``--s -8,-4`` pass: argparse would read '-8,-4' as an option."""
    out: list[str] = []
    i = 0
    while i < len(argv):
        if argv[i] == "--s" and i + 1 < len(argv) and _NUMLIST.match(argv[i + 1]):
            out.append(f"--s={argv[i + 1]}")
            i += 2
            continue
        out.append(argv[i])
        i += 1
    return out


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_join_negative_values(argv))
        return args.func(args)
    except CliError as err:
        return _emit_error(err)


if __name__ == "__main__":
    sys.exit(main())
