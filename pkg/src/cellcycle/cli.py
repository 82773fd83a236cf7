"""Command-line entry point.

Every command writes its outputs plus ``<command>.manifest.json`` into
``--out``.  ``cellcycle --replay <manifest>`` re-runs a manifest with the
model stored in it and reproduces the same files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .density import GridDensity
from .discrete import alpha_profile, build_kernel, power_iterate
from .errors import CellCycleError, ParseError
from .flows import FlowSolver
from .model import ModelSpec, load_spec, save_spec, test_model, validate
from .pde import (audit_summary, evolve, history_from_frames, make_field, stationary_residual,
                  write_frames)
from .pdmp import PdmpState, simulate_continuous, simulate_ensemble, simulate_generations_ensemble, substream
from .stationary import StationaryProfile, classify_continuous, marginal_resting
from .verify import FAIL, SKIP, run_verification

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID = 0, 1, 2


class InvalidModel(Exception):
    def __init__(self, report=None, message=""):
        super().__init__(message)
        self.report = report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _dump(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)


class Run:
    """Collects outputs and resolved parameters for one command."""

    def __init__(self, args, spec):
        self.args = args
        self.spec = spec
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.params = {}
        self.summary = {}

    def path(self, name):
        self.outputs.append(name)
        return self.out / name

    def manifest(self):
        argv = {k: v for k, v in vars(self.args).items() if k not in ("replay", "out")}
        return {
            "tool": "cellcycle",
            "version": __version__,
            "command": self.args.command,
            "model_path": self.args.model,
            "model": self.spec.to_dict() if self.spec is not None else None,
            "seed": self.args.seed,
            "arguments": argv,
            "parameters": self.params,
            "outputs": sorted(set(self.outputs)),
        }


# -- model resolution -----------------------------------------------------------


def resolve_model(args) -> ModelSpec:
    if args.model == "builtin:test":
        spec = test_model(args.m_max or 32.0)
    elif args.model == "builtin:counterexample":
        from .counterexample import counterexample_spec
        spec = counterexample_spec(args.m_max or 32.0, args.grid_n)
    elif args.model is None:
        raise InvalidModel(message="--model is required for this command")
    else:
        try:
            spec = load_spec(args.model)
        except FileNotFoundError:
            raise InvalidModel(message=f"model file not found: {args.model}")
    if args.m_max is not None and spec.mMax != args.m_max:
        spec = dataclasses.replace(spec, mMax=float(args.m_max))
    return spec


def checked(spec):
    rep = validate(spec)
    if not rep.accepted:
        raise InvalidModel(rep, "model violates: " + ", ".join(c.name for c in rep.blocking))
    return rep


# -- commands ----------------------------------------------------------------------


def cmd_validate(run: Run):
    rep = validate(run.spec)
    _dump(run.path("validation.json"), rep.to_dict())
    run.summary = {"accepted": rep.accepted, "failed": [c.name for c in rep.blocking],
                   "advisory_failed": [c.name for c in rep.failed if not c.required]}
    if not rep.accepted:
        raise InvalidModel(rep, "model violates: " + ", ".join(run.summary["failed"]))


def _classify(spec, n, margin=0.01, ratio_threshold=1.05):
    report, extras = classify_continuous(spec, n=n, margin=margin, ratio_threshold=ratio_threshold)
    disc = extras["discrete"]
    out = {
        "discrete": disc.to_dict(),
        "continuous": report.to_dict(),
        "verdicts": {"discrete": str(disc.verdict), "continuous": str(report.verdict)},
        "T_R": report.evidence.get("T_R"),
        "c": report.evidence.get("c"),
        "thresholds": {"alpha_margin": margin, "T_R_ratio": ratio_threshold, "grid_n": n},
    }
    return out, extras


def cmd_classify(run: Run):
    checked(run.spec)
    a = run.args
    run.params = {"grid_n": a.grid_n, "alpha_margin": a.margin, "T_R_ratio": a.ratio_threshold}
    out, _ = _classify(run.spec, a.grid_n, a.margin, a.ratio_threshold)
    _dump(run.path("classify.json"), out)
    run.summary = {"discrete": out["verdicts"]["discrete"], "continuous": out["verdicts"]["continuous"],
                   "T_R": out["T_R"], "c": out["c"],
                   "alpha_liminf_bound": out["discrete"]["evidence"].get("alpha_liminf_bound")}


def cmd_iterate(run: Run):
    checked(run.spec)
    a, spec = run.args, run.spec
    run.params = {"grid_n": a.grid_n, "tol": a.tol, "n_max": a.n_max, "init": a.init}
    K = build_kernel(spec, a.grid_n)
    if a.init == "uniform":
        f0 = GridDensity.uniform(0.0, min(10.0, spec.mMax), spec.mMax, a.grid_n)
    else:
        f0 = GridDensity.point_mass(spec.mMax, a.grid_n)
    res = power_iterate(K, f0, n_max=a.n_max, tol=a.tol)
    info = res.to_dict()
    info["kernel_raw_column_defect"] = K.raw_column_defect
    if res.fixed_point is not None:
        res.fixed_point.to_csv(run.path("fixed_point.csv"), extra={"status": res.status})
        run.outputs.append("fixed_point.json")
    np.savetxt(run.path("iterate_history.csv"), np.column_stack([np.arange(1, res.diffs.size + 1), res.diffs,
               res.masses[:res.diffs.size]]), delimiter=",", header="k,diff,mass", comments="", fmt="%.17g")
    _dump(run.path("iterate.json"), info)
    run.summary = {"status": res.status, "iterations": res.iterations}


def histogram_density(samples, m_max, n):
    """Histogram on the n grid cells, reported at the nodes (cell averages)."""
    edges = np.linspace(0.0, m_max, n + 1)
    counts, _ = np.histogram(samples, bins=edges)
    cell = counts / max(len(samples), 1) / (m_max / n)
    nodes = np.empty(n + 1)
    nodes[0], nodes[-1] = cell[0], cell[-1]
    nodes[1:-1] = 0.5 * (cell[1:] + cell[:-1])
    return GridDensity(m_max, nodes)


def cmd_simulate(run: Run):
    checked(run.spec)
    a, spec = run.args, run.spec
    fs = FlowSolver(spec)
    n_bins = min(a.grid_n, 512)
    if a.mode == "generations":
        run.params = {"trajectories": a.trajectories, "generations": a.generations, "m0": a.m0,
                      "histogram_cells": n_bins}
        gens, esc = simulate_generations_ensemble(fs, a.m0, a.generations, a.trajectories, a.seed)
        np.savetxt(run.path("generations.csv"), gens[: min(a.trajectories, 1000)], delimiter=",",
                   header=",".join(f"m{k + 1}" for k in range(a.generations)), comments="", fmt="%.17g")
        last = gens[:, -1]
        h = histogram_density(last[np.isfinite(last)], spec.mMax, n_bins)
        h = GridDensity(spec.mMax, h.values * np.isfinite(last).mean(), float(np.mean(~np.isfinite(last))))
        h.to_csv(run.path("last_generation.csv"))
        run.outputs.append("last_generation.json")
        run.summary = {"escaped": int(np.sum(esc)), "mean_last": float(np.nanmean(last))}
    else:
        run.params = {"trajectories": a.trajectories, "horizon": a.horizon, "sample_dt": a.sample_dt,
                      "burn_in": a.burn_in, "m0": a.m0, "histogram_cells": n_bins}
        traj = simulate_continuous(fs, PdmpState(0.0, a.m0, 1), a.horizon, a.sample_dt, substream(a.seed, 0), a.seed)
        traj.to_csv(run.path("events_trajectory0.csv"))
        ens = simulate_ensemble(fs, a.trajectories, a.horizon, a.sample_dt, a.seed, m0=a.m0, burn_in=a.burn_in)
        aa, mm, ii = ens.states(a.burn_in)
        share = float(np.mean(ii == 1)) if ii.size else 0.0
        h = histogram_density(mm[ii == 1], spec.mMax, n_bins)
        GridDensity(spec.mMax, share * h.values).to_csv(run.path("resting_maturity.csv"), extra={"phase": 1})
        run.outputs.append("resting_maturity.json")
        run.summary = {"occupancy_phase2": ens.occupancy(), "escaped": int(ens.escaped.sum()),
                       "samples": int(mm.size)}
    _dump(run.path("simulate.json"), run.summary)


def _fixed_point(spec, n, tol=1e-9):
    K = build_kernel(spec, n)
    res = power_iterate(K, GridDensity.uniform(0.0, min(10.0, spec.mMax), spec.mMax, n), tol=tol)
    return res


def cmd_stationary(run: Run):
    checked(run.spec)
    a, spec = run.args, run.spec
    run.params = {"grid_n": a.grid_n, "T_R_ratio": a.ratio_threshold}
    fs = FlowSolver(spec)
    res = _fixed_point(spec, a.grid_n)
    if res.fixed_point is None:
        _dump(run.path("stationary.json"), {"power_iteration": res.to_dict(), "T_R": None})
        run.summary = {"status": res.status, "T_R": None}
        return
    prof = StationaryProfile.build(fs, res.fixed_point, ratio_threshold=a.ratio_threshold)
    res.fixed_point.to_csv(run.path("f_star.csv"))
    run.outputs.append("f_star.json")
    c = prof.c if prof.c > 0 else 1.0
    marg = marginal_resting(fs, prof.smooth, c)
    marg.to_csv(run.path("resting_marginal.csv"), extra={"c": c, "normalized": prof.c > 0})
    run.outputs.append("resting_marginal.json")
    resid = stationary_residual(fs, marg)
    info = {"resting_time": prof.resting.to_dict(), "c": prof.c, "T_R": None if prof.resting.infinite else prof.T_R,
            "stationary_residual_l1": resid.l1, "power_iteration": res.to_dict()}
    _dump(run.path("stationary.json"), info)
    run.summary = {"T_R": info["T_R"], "c": prof.c, "infinite": prof.resting.infinite}


def _initial_profile(kind, fs, n_grid, prof=None, cut=10.0):
    x = np.linspace(0.0, fs.spec.mMax, n_grid + 1)
    if kind == "cohort":
        return np.where(x <= 1.0, 1.0, 0.0)
    if prof is None:
        raise CellCycleError("no stationary profile available for this initial condition")
    c = prof.c if prof.c > 0 else 1.0
    R = marginal_resting(fs, prof.smooth, c, x).values
    if kind == "truncated":
        R = np.where(x <= cut, R, 0.0)
    return R


def pde_run(fs, R0, dm, dt, t_end, snapshot_every, history=None):
    fld = make_field(fs, R0, dm=dm, dt=dt, history=history)
    frames = []
    evolve(fld, t_end, snapshot_every=snapshot_every, snapshots=frames)
    return fld, frames


def cmd_pde(run: Run):
    checked(run.spec)
    a, spec = run.args, run.spec
    fs = FlowSolver(spec)
    n_grid = int(round(spec.mMax / a.dm))
    prof = None
    if a.initial in ("stationary", "truncated"):
        res = _fixed_point(spec, run.args.grid_n)
        if res.fixed_point is not None:
            prof = StationaryProfile.build(fs, res.fixed_point)
    if a.initial_csv:
        R0 = GridDensity.from_csv(a.initial_csv)(np.linspace(0.0, spec.mMax, n_grid + 1))
    else:
        R0 = _initial_profile(a.initial, fs, n_grid, prof, a.truncate)
    history = history_from_frames(a.history) if a.history else None
    fld, frames = pde_run(fs, R0, a.dm, a.dt, a.t_end, a.snapshot_every, history)
    run.params = {"dm": fld.dm, "dt": fld.dt, "t_end": a.t_end, "cfl": fld.cfl(), "initial": a.initial,
                  "initial_csv": a.initial_csv, "history": fld.history_kind, "history_path": a.history,
                  "snapshot_every": a.snapshot_every, "truncate": a.truncate}
    write_frames(run.path("frames.csv"), fld.grid, frames)
    series = [(t, fld.dm * R[1:].sum(), fld.dm * R[(fld.grid > 0) & (fld.grid <= a.truncate)].sum())
              for t, R in frames]
    np.savetxt(run.path("mass.csv"), np.asarray(series), delimiter=",", header=f"t,mass,mass_0_{a.truncate:g}",
               comments="", fmt="%.17g")
    info = {"final_mass": fld.mass, "escaped_mass": fld.escaped_mass, "history": fld.history_kind,
            "audit": audit_summary(fld), "cfl": fld.cfl()}
    _dump(run.path("pde.json"), info)
    run.summary = {"final_mass": fld.mass, "escaped_mass": fld.escaped_mass}


def format_row(r):
    stat = "-" if r.statistic is None else f"{r.statistic:.4g}"
    thr = "-" if r.threshold is None else f"{r.threshold:.4g}"
    tail = f"  [{r.detail}]" if r.detail else ""
    return f"{r.verdict:7s} {r.name}: {stat} (threshold {thr}){tail}"


def cmd_verify(run: Run):
    checked(run.spec)
    a = run.args
    run.params = {"budget": a.budget, "grid_n": a.grid_n}
    rows = run_verification(run.spec, budget=a.budget, seed=a.seed, n=a.grid_n)
    _dump(run.path("verify.json"), [r.to_dict() for r in rows])
    run.summary = {"rows": [format_row(r) for r in rows],
                   "failed": sum(r.verdict == FAIL for r in rows),
                   "skipped": sum(r.verdict == SKIP for r in rows)}


def cmd_counterexample(run: Run):
    from .counterexample import counterexample_spec
    a = run.args
    spec = counterexample_spec(a.m_max or 32.0, a.grid_n)
    run.spec = spec
    fs = FlowSolver(spec)
    run.params = {"grid_n": a.grid_n, "budget": a.budget, "dm": a.dm, "t_end": a.t_end, "truncate": a.truncate}
    save_spec(spec, run.path("counterexample_spec.json"))
    rep = validate(spec)
    _dump(run.path("validation.json"), rep.to_dict())
    cls, extras = _classify(spec, a.grid_n)
    _dump(run.path("classify.json"), cls)

    grid = np.linspace(0.0, spec.mMax, a.grid_n + 1)
    alpha = alpha_profile(fs, grid)
    np.savetxt(run.path("alpha_profile.csv"), np.column_stack([grid, alpha]), delimiter=",",
               header="m,alpha", comments="", fmt="%.17g")
    tail = grid >= 0.75 * spec.mMax
    f_star = extras["power"].fixed_point
    checks = {"alpha_tail_min": float(np.nanmin(alpha[tail])), "alpha_tail_max": float(np.nanmax(alpha[tail]))}
    if f_star is not None:
        f_star.to_csv(run.path("f_star.csv"))
        run.outputs.append("f_star.json")
        prof = extras["profile"]
        marg = marginal_resting(fs, prof.smooth, 1.0)
        marg.to_csv(run.path("resting_marginal_unnormalized.csv"))
        run.outputs.append("resting_marginal_unnormalized.json")
        sel = (marg.grid >= spec.mP + 1.0) & (marg.grid <= 0.5 * spec.mMax)
        v = marg.values[sel]
        checks["tail_relative_variation"] = float((v.max() - v.min()) / v.mean())
        checks["tail_flatness_threshold"] = 1e-4
        checks["tail_window"] = [spec.mP + 1.0, 0.5 * spec.mMax]
        n_pde = int(round(spec.mMax / a.dm))
        R0 = _initial_profile("truncated", fs, n_pde, dataclasses.replace(prof, c=1.0), a.truncate)
        fld = make_field(fs, R0, dm=a.dm)
        inner = (fld.grid > 0) & (fld.grid <= a.truncate)
        masses = [fld.dm * fld.R[inner].sum()]
        frames = []
        # the monotonicity check sees every step, not only the stored frames
        evolve(fld, a.t_end, snapshot_every=1.0, snapshots=frames, audit=False,
               monitor=lambda t, R: masses.append(fld.dm * R[inner].sum()))
        write_frames(run.path("R_frames.csv"), fld.grid, frames)
        masses = np.asarray(masses)
        checks["pde_mass_monotone"] = bool(np.all(np.diff(masses) <= 0.0))
        checks["pde_mass_start_end"] = [float(masses[0]), float(masses[-1])]
        checks["pde_initial"] = f"stationary resting profile truncated to m <= {a.truncate:g}, frozen history"
    vrows = run_verification(spec, budget=a.budget, seed=a.seed, n=a.grid_n)
    _dump(run.path("verify.json"), [r.to_dict() for r in vrows])
    out = {"verdicts": cls["verdicts"], "checks": checks}
    _dump(run.path("counterexample.json"), out)
    run.summary = {**cls["verdicts"], **{k: v for k, v in checks.items() if not isinstance(v, list)}}


COMMANDS = {
    "validate": cmd_validate,
    "classify": cmd_classify,
    "iterate": cmd_iterate,
    "simulate": cmd_simulate,
    "stationary": cmd_stationary,
    "pde": cmd_pde,
    "verify": cmd_verify,
    "counterexample": cmd_counterexample,
}


# -- argument parsing -------------------------------------------------------------


def _global_flags(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--model", default=d(None), help="model JSON path, or builtin:test / builtin:counterexample")
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--out", default=d("cellcycle-out"), help="output directory")
    p.add_argument("--grid-n", type=int, default=d(2048))
    p.add_argument("--m-max", type=float, default=d(None), help="override the model's mMax")
    p.add_argument("--json", action="store_true", default=d(False), help="print the summary as JSON")


def build_parser():
    parser = argparse.ArgumentParser(prog="cellcycle", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("--replay", metavar="MANIFEST", help="re-run a manifest")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")
    parent = argparse.ArgumentParser(add_help=False)
    _global_flags(parent, suppress=True)

    sub.add_parser("validate", parents=[parent], help="check model assumptions")
    p = sub.add_parser("classify", parents=[parent], help="discrete and continuous verdicts")
    p.add_argument("--margin", type=float, default=0.01)
    p.add_argument("--ratio-threshold", type=float, default=1.05)
    p = sub.add_parser("iterate", parents=[parent], help="power iteration of the generational operator")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--n-max", type=int, default=100_000)
    p.add_argument("--init", choices=("uniform", "point"), default="uniform")
    p = sub.add_parser("simulate", parents=[parent], help="PDMP simulation")
    p.add_argument("--mode", choices=("continuous", "generations"), default="continuous")
    p.add_argument("--trajectories", type=int, default=10_000)
    p.add_argument("--horizon", type=float, default=120.0)
    p.add_argument("--sample-dt", type=float, default=float(np.sqrt(0.5)))
    p.add_argument("--burn-in", type=float, default=20.0)
    p.add_argument("--generations", type=int, default=50)
    p.add_argument("--m0", type=float, default=0.0)
    p = sub.add_parser("stationary", parents=[parent], help="stationary densities and T_R")
    p.add_argument("--ratio-threshold", type=float, default=1.05)
    p = sub.add_parser("pde", parents=[parent], help="evolve the delayed transport equation")
    p.add_argument("--dm", type=float, default=1e-2)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-end", type=float, default=10.0)
    p.add_argument("--snapshot-every", type=float, default=1.0)
    p.add_argument("--initial", choices=("stationary", "truncated", "cohort"), default="stationary")
    p.add_argument("--initial-csv", default=None, help="initial profile as a GridDensity CSV")
    p.add_argument("--truncate", type=float, default=10.0)
    p.add_argument("--history", default=None, help="(t, m, R) frames covering [-tau, 0]")
    p = sub.add_parser("verify", parents=[parent], help="cross-check table")
    p.add_argument("--budget", type=int, default=10_000, help="trajectories; 0 skips statistical rows")
    p = sub.add_parser("counterexample", parents=[parent], help="stable operator, sweeping semigroup")
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--dm", type=float, default=1e-2)
    p.add_argument("--t-end", type=float, default=50.0)
    p.add_argument("--truncate", type=float, default=10.0)
    return parser


def _print(run: Run, args, ok=True):
    if args.json:
        print(json.dumps(_jsonable({"command": args.command, "ok": ok, **run.summary}), sort_keys=True))
        return
    for k, v in run.summary.items():
        if isinstance(v, list):
            print(f"{k}:")
            for item in v:
                print(f"  {item}")
        else:
            print(f"{k}: {v}")


def _replay_args(parser, manifest_path, out=None):
    man = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    args = argparse.Namespace(**man["arguments"])
    args.replay = None
    args.out = out if out is not None else "cellcycle-out"
    spec = ModelSpec.from_dict(man["model"]) if man.get("model") else None
    return args, spec


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    spec = None
    if args.replay:
        out = args.out if args.out != "cellcycle-out" else None
        args, spec = _replay_args(parser, args.replay, out)
    if not args.command:
        parser.print_help()
        return EXIT_INVALID
    run = None
    try:
        if spec is None and args.command != "counterexample":
            spec = resolve_model(args)
        run = Run(args, spec)
        COMMANDS[args.command](run)
        _dump(run.out / f"{args.command}.manifest.json", run.manifest())
        _print(run, args)
        return EXIT_OK
    except (InvalidModel, ParseError) as exc:
        report = getattr(exc, "report", None)
        if run is not None:
            _dump(run.out / f"{args.command}.manifest.json", run.manifest())
        if args.json:
            print(json.dumps(_jsonable({"command": args.command, "ok": False, "error": str(exc),
                                        "report": report.to_dict() if report else None}), sort_keys=True))
        else:
            print(f"invalid model: {exc}", file=sys.stderr)
            if report is not None:
                for c in report.checks:
                    mark = "ok  " if c.passed else ("FAIL" if c.required else "warn")
                    where = "" if c.witness is None else f" (witness m={c.witness:g})"
                    print(f"  {mark} {c.name}: {c.detail}{where}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if not isinstance(exc, CellCycleError):
            traceback.print_exc(file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
