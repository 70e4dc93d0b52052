"""Command line interface: ``h2hub run|scenario|sweep-commission|sweep-bargaining|diff|validate``.

Exit codes: 0 success, 2 invalid input (calibration, arguments, incompatible
runs), 3 a solver failed to converge, 4 coordination was infeasible.
Errors are also reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import random
import sys

import numpy as np

from . import __version__
from . import reporting as rep
from .calibration import CalibrationError, calibration_hash, load_calibration
from .contracts import BargainingPowers, ContractConsistencyError
from .model import DomainError
from .scenarios import (
    SCENARIOS,
    ScenarioError,
    ScenarioSpec,
    bargaining_sweep,
    commission_sweep,
    parse_grid,
    rollout,
)
from .solvers import ConvergenceError, Regime, SolverSettings

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGENCE = 3
EXIT_INFEASIBLE = 4

DEFAULT_DELTA_GRID = "0:0.5:0.01"


class RandomnessUsed(RuntimeError):
    pass


@contextlib.contextmanager
def forbid_rng():
    """Make any call into the stdlib or numpy random generators raise."""

    def trap(name):
        def f(*args, **kwargs):
            raise RandomnessUsed(f"random number generator called ({name}) in a seedless run")

        return f

    patched = []
    for mod, names in (
        (random, ("random", "seed", "uniform", "randint", "choice", "shuffle", "gauss", "Random")),
        (np.random, ("default_rng", "seed", "rand", "randn", "random", "uniform", "normal", "choice", "RandomState")),
    ):
        for name in names:
            patched.append((mod, name, getattr(mod, name)))
            setattr(mod, name, trap(f"{mod.__name__}.{name}"))
    try:
        yield
    finally:
        for mod, name, orig in patched:
            setattr(mod, name, orig)


class _Failure(Exception):
    def __init__(self, code, kind, message, issues=None):
        super().__init__(message)
        self.code, self.kind, self.message, self.issues = code, kind, message, issues or []


def _regimes(text: str) -> tuple[Regime, ...]:
    try:
        return tuple(Regime.parse(tok.strip()) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise _Failure(EXIT_INVALID, "arguments", str(exc)) from exc


def _powers(text: str | None) -> BargainingPowers:
    if text is None:
        return BargainingPowers()
    try:
        z = [float(v) for v in text.split(",")]
        if len(z) != 3:
            raise ValueError("expected three comma-separated powers z_shp,z_chpe,z_hub")
        return BargainingPowers(*z)
    except (ValueError, DomainError) as exc:
        raise _Failure(EXIT_INVALID, "arguments", str(exc)) from exc


def _settings(args) -> SolverSettings:
    return SolverSettings(mode=args.mode)


def _manifest(args, cal, settings, scenarios, regimes, powers) -> dict:
    return {
        "tool": "h2hub",
        "version": __version__,
        "command": args.command,
        "calibration": args.calibration or "<default>",
        "calibration_hash": calibration_hash(cal),
        "scenarios": list(scenarios),
        "regimes": [r.value for r in regimes],
        "bargaining_powers": dataclasses.asdict(powers),
        "solver_settings": dataclasses.asdict(settings),
        "delta_grid": getattr(args, "delta_grid", None),
        "seedless": bool(getattr(args, "seedless", False)),
    }


def _load(args):
    try:
        return load_calibration(args.calibration)
    except CalibrationError as exc:
        raise _Failure(EXIT_INVALID, "calibration", str(exc), exc.issues) from exc


def _rollouts(cal, names, regimes, powers, settings) -> dict:
    runs = {}
    for name in names:
        try:
            spec = ScenarioSpec.named(name, cal, regimes=regimes, powers=powers, settings=settings)
            runs[name] = rollout(spec)
        except ScenarioError as exc:
            raise _Failure(EXIT_INVALID, "scenario", str(exc)) from exc
    return runs


def _path_failures(runs) -> dict:
    return {f"{n}/{r.value}": p for n, run in runs.items() for r, p in run.paths.items() if p.error}


def _infeasible(runs, names=None) -> list[str]:
    out = []
    for n, run in runs.items():
        path = run.paths.get(Regime.CO)
        if path is None or (names is not None and n not in names):
            continue
        out += [f"{n}: period {t} {typ}" for t, typ in path.infeasible]
    return out


def _check_runs(runs, fatal_infeasible=None):
    """Raise for failed paths (exit 3, or 4 for contract errors) and for infeasible
    contracts in the scenarios named in ``fatal_infeasible`` (all when None)."""
    failed = _path_failures(runs)
    if failed:
        kinds = {p.error_kind for p in failed.values()}
        code = EXIT_INFEASIBLE if kinds == {"contract"} else EXIT_NONCONVERGENCE
        raise _Failure(code, "solver", "regime paths failed", [f"{k}: {p.error}" for k, p in sorted(failed.items())])
    infeasible = _infeasible(runs, fatal_infeasible)
    if infeasible:
        raise _Failure(EXIT_INFEASIBLE, "coordination", "coordination contract infeasible", infeasible)


def _tables_for_runs(runs) -> dict:
    return {
        "penetration": rep.penetration_rows(runs),
        "market_shares": rep.share_rows(runs),
        "prices": rep.price_rows(runs),
        "profits": rep.profit_rows(runs),
    }


def _feasibility(run) -> list[dict]:
    path = run.paths.get(Regime.CO)
    if path is None:
        return []
    return rep.feasibility_rows(path.outcomes, run.calibration.years)


def cmd_run(args):
    cal = _load(args)
    settings, regimes, powers = _settings(args), _regimes(args.regimes), _powers(args.powers)
    grid = _grid(args.delta_grid)
    names = list(SCENARIOS)
    runs = _rollouts(cal, names, regimes, powers, settings)
    tables = _tables_for_runs(runs)
    base = runs["baseline"]
    co = base.paths.get(Regime.CO)
    if co is not None and not co.error:
        # contract artifacts describe the baseline coordination regime
        tables["lump_sum_feasibility"] = _feasibility(base)
        tables["commission_sweep"] = rep.commission_rows(_solve(commission_sweep, base.spec, grid, base))
        tables["bargaining_cases"] = rep.bargaining_rows(_solve(bargaining_sweep, base.spec), cal.years)
    manifest = _manifest(args, cal, settings, names, regimes, powers)
    manifest["infeasible_contracts"] = _infeasible(runs)
    manifest["failed_paths"] = {k: p.error for k, p in sorted(_path_failures(runs).items())}
    rep.write_artifacts(args.out, tables, args.format, manifest)
    _check_runs(runs, fatal_infeasible=["baseline"])
    return EXIT_OK


def cmd_scenario(args):
    cal = _load(args)
    settings, regimes, powers = _settings(args), _regimes(args.regimes), _powers(args.powers)
    runs = _rollouts(cal, args.names, regimes, powers, settings)
    tables = _tables_for_runs(runs)
    manifest = _manifest(args, cal, settings, args.names, regimes, powers)
    manifest["infeasible_contracts"] = _infeasible(runs)
    manifest["failed_paths"] = {k: p.error for k, p in sorted(_path_failures(runs).items())}
    rep.write_artifacts(args.out, tables, args.format, manifest)
    _check_runs(runs)
    return EXIT_OK


def _grid(text):
    try:
        return parse_grid(text)
    except ScenarioError as exc:
        raise _Failure(EXIT_INVALID, "arguments", str(exc)) from exc


def _solve(fn, *a):
    try:
        return fn(*a)
    except ConvergenceError as exc:
        raise _Failure(EXIT_NONCONVERGENCE, "solver", str(exc)) from exc
    except ContractConsistencyError as exc:
        raise _Failure(EXIT_INFEASIBLE, "coordination", str(exc)) from exc
    except ScenarioError as exc:
        raise _Failure(EXIT_INVALID, "scenario", str(exc)) from exc


def cmd_sweep_commission(args):
    cal = _load(args)
    settings, powers = _settings(args), _powers(args.powers)
    grid = _grid(args.delta_grid)
    spec = ScenarioSpec.named(args.scenario, cal, regimes=(Regime.CO,), powers=powers, settings=settings)
    sweep = _solve(commission_sweep, spec, grid)
    tables = {"commission_sweep": rep.commission_rows(sweep)}
    rep.write_artifacts(args.out, tables, args.format, _manifest(args, cal, settings, [args.scenario], (Regime.CO,), powers))
    if not all(p.feasible for p in sweep.points):
        raise _Failure(
            EXIT_INFEASIBLE, "coordination", "infeasible at some commission rates", [f"delta={p.delta}" for p in sweep.points if not p.feasible]
        )
    return EXIT_OK


def cmd_sweep_bargaining(args):
    cal = _load(args)
    settings, powers = _settings(args), _powers(args.powers)
    spec = ScenarioSpec.named(args.scenario, cal, regimes=(Regime.CO,), powers=powers, settings=settings)
    rows = _solve(bargaining_sweep, spec)
    run = _rollouts(cal, [args.scenario], (Regime.CO,), powers, settings)[args.scenario]
    tables = {"bargaining_cases": rep.bargaining_rows(rows, cal.years), "lump_sum_feasibility": _feasibility(run)}
    manifest = _manifest(args, cal, settings, [args.scenario], (Regime.CO,), powers)
    manifest["infeasible_cases"] = sorted({f"case {r.case}: period {r.t} {r.type}" for r in rows if not r.feasible})
    rep.write_artifacts(args.out, tables, args.format, manifest)
    if manifest["infeasible_cases"]:
        raise _Failure(EXIT_INFEASIBLE, "coordination", "infeasible bargaining cases", manifest["infeasible_cases"])
    return EXIT_OK


def cmd_diff(args):
    try:
        report = rep.diff_runs(args.a, args.b)
    except (FileNotFoundError, rep.IncompatibleRunsError, KeyError) as exc:
        raise _Failure(EXIT_INVALID, "diff", str(exc)) from exc
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args):
    cal = _load(args)
    print(json.dumps({"valid": True, "calibration": args.calibration or "<default>", "calibration_hash": calibration_hash(cal)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="h2hub", description="Hydrogen hub market equilibrium simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, outputs=True):
        sp.add_argument("--calibration", help="calibration file (YAML or JSON); default is the shipped calibration")
        if outputs:
            sp.add_argument("--out", default="h2hub-out", help="output directory")
            sp.add_argument("--format", choices=("csv", "json"), default="csv")
            sp.add_argument("--powers", help="bargaining powers z_shp,z_chpe,z_hub (default equal)")
            sp.add_argument("--mode", choices=("paper", "full"), default="paper", help="first-order condition form")
            sp.add_argument("--seedless", action="store_true", help="fail if any random number generator is used")

    sp = sub.add_parser("run", help="all scenarios, regimes, sweeps and artifacts")
    common(sp)
    sp.add_argument("--regimes", default="ct,cn,co")
    sp.add_argument("--delta-grid", default=DEFAULT_DELTA_GRID, help="commission grid start:stop:step")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("scenario", help="roll out named scenarios")
    common(sp)
    sp.add_argument("names", nargs="+", choices=SCENARIOS)
    sp.add_argument("--regimes", default="ct,cn,co")
    sp.set_defaults(func=cmd_scenario)

    sp = sub.add_parser("sweep-commission", help="hub commission sweep in the final period")
    common(sp)
    sp.add_argument("--scenario", default="baseline", choices=SCENARIOS)
    sp.add_argument("--delta-grid", default=DEFAULT_DELTA_GRID)
    sp.set_defaults(func=cmd_sweep_commission)

    sp = sub.add_parser("sweep-bargaining", help="lump sums and profits across bargaining cases")
    common(sp)
    sp.add_argument("--scenario", default="baseline", choices=SCENARIOS)
    sp.set_defaults(func=cmd_sweep_bargaining)

    sp = sub.add_parser("diff", help="compare two output directories")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.set_defaults(func=cmd_diff)

    sp = sub.add_parser("validate", help="check a calibration file")
    common(sp, outputs=False)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    guard = forbid_rng() if getattr(args, "seedless", False) else contextlib.nullcontext()
    try:
        with guard:
            return args.func(args)
    except _Failure as exc:
        err = {"error": exc.kind, "message": exc.message, "exit_code": exc.code}
        if exc.issues:
            err["issues"] = exc.issues
        print(json.dumps(err), file=sys.stderr)
        return exc.code
    except RandomnessUsed as exc:
        print(json.dumps({"error": "randomness", "message": str(exc), "exit_code": EXIT_INVALID}), file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
