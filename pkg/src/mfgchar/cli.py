"""Command line entry point: ``mfgchar {solve,verify,master,convergence}``.

Exit codes: 0 success, 2 no convergence (or failed inversion), 3 invalid
configuration, 4 a check failed.
"""

import argparse
import os
import platform
import sys
import time
from importlib import metadata

import numpy as np
import scipy

from . import report
from .errors import (ConfigError, InvalidInputError, InversionError, MfgError,
                     NoConvergenceError, UnsupportedCaseError)
from .characteristics import solve
from .mfg import build_solution
from .runner import convergence_table, master_rows, run_checks
from .scenarios import Scenario

EXIT_OK, EXIT_NO_CONVERGENCE, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3, 4


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def build_parser():
    p = argparse.ArgumentParser(prog="mfgchar", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve one scenario and dump the field and solution"),
                        ("verify", "run the residual checks of a scenario"),
                        ("master", "evaluate the master equation at the probe set"),
                        ("convergence", "refinement sweep with tables and charts")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--scenario", required=True,
                        help="scenario file (.ini/.json) or catalog name")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="seed for uniform particle samples")
        sp.add_argument("--tol", type=float, help="fixed-point tolerance")
        sp.add_argument("--max-iter", type=int, dest="max_iters")
        sp.add_argument("--T", type=float, dest="T")
        sp.add_argument("--s", type=float, dest="s")
        sp.add_argument("--K", type=int, dest="K")
        sp.add_argument("--grid", type=int, help="query grid points per axis")
        sp.add_argument("--n-particles", type=int, dest="n")
        sp.add_argument("--fd-step", type=float, dest="h_q", help="spatial FD step")
        sp.add_argument("--timing", action="store_true",
                        help="record wall time in the manifest (breaks byte identity)")
    return p


def _manifest(args, scenario, status, extra=None, wall=None):
    out = {
        "command": args.command,
        "scenario": scenario.echo() if scenario is not None else None,
        "seed": args.seed,
        "versions": {"artifact": _version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "wall_time_s": wall,
        "status": status,
    }
    out.update(extra or {})
    return out


def _cmd_solve(args, sc, out):
    cfg = sc.config()
    field = solve(sc.triple, cfg.s, sc.measure(), _grid(sc), cfg)
    sol = build_solution(field, sc.grid)
    report.write_csv(os.path.join(out, "field.csv"), *report.field_rows(field))
    report.write_csv(os.path.join(out, "solution.csv"), *report.solution_rows(sol))
    return EXIT_OK, {"iterations": field.iterations, "diffs": field.log.diffs,
                     "ratios": field.log.ratios,
                     "files": ["field.csv", "solution.csv"]}


def _grid(sc):
    from .torus import uniform_grid
    return uniform_grid(sc.grid, sc.d)


def _cmd_verify(args, sc, out):
    _, _, results = run_checks(sc)
    rows = [[r.name, r.level, r.K, r.m, r.value, r.tolerance, r.passed, r.note]
            for r in results]
    report.write_csv(os.path.join(out, "residuals.csv"),
                     ["check_name", "refinement_level", "K", "m", "value", "tolerance",
                      "passed", "note"], rows)
    checks = [{"name": r.name, "value": r.value, "tolerance": r.tolerance,
               "passed": r.passed} for r in results]
    code = EXIT_OK if all(r.passed for r in results) else EXIT_CHECK
    return code, {"checks": checks, "files": ["residuals.csv"]}


def _cmd_master(args, sc, out):
    # explicit size overrides select a single level instead of the sweep
    use_sweep = sc.data.get("sweep", {}).get("n") and args.n is None and args.K is None
    levels = sc.sweep_levels() if use_sweep else [(None, None, None)]
    d = sc.d
    header = (["scenario", "level", "n", "K", "m", "h_q", "h_x", "s"]
              + [f"q_{a}" for a in range(d)]
              + ["u", "grad_q_u_norm", "residual", "upsilon_rel_error"])
    rows, solves = [], []
    for lvl, (K, m, n) in enumerate(levels):
        for r in master_rows(sc, K=K, n=n):
            rows.append([sc.name, lvl, r["n"], r["K"], m if m is not None else sc.grid,
                         r["h_q"], r["h_x"], r["s"], *r["q"], r["u"], r["grad_q_u_norm"],
                         r["residual"], r["upsilon_rel_error"]])
        qs, ss = sc.master_probes()
        nn = sc.measure(n).n
        for s in ss:
            solves.append({"level": lvl, "s": s, "n": nn, "base": 1,
                           "particle_perturbations": 2 * d * nn,
                           "s_shifts": 2 * len(qs)})
    report.write_csv(os.path.join(out, "master.csv"), header, rows)
    return EXIT_OK, {"resolves": solves, "files": ["master.csv"]}


def _cmd_convergence(args, sc, out):
    rows = convergence_table(sc)
    report.write_csv(os.path.join(out, "convergence.csv"),
                     ["check", "level", "K", "m", "n", "value", "ratio"],
                     [[r["check"], r["level"], r["K"], r["m"], r["n"], r["value"], r["ratio"]]
                      for r in rows])
    files = ["convergence.csv"]
    for name in dict.fromkeys(r["check"] for r in rows):
        sel = [r for r in rows if r["check"] == name]
        fname = f"convergence_{name}.svg"
        report.svg_line_chart(os.path.join(out, fname), f"{sc.name}: {name}",
                              [r["level"] for r in sel], [r["value"] for r in sel],
                              ylabel=name, log=name != "iterations")
        files.append(fname)
    return EXIT_OK, {"files": files}


COMMANDS = {"solve": _cmd_solve, "verify": _cmd_verify, "master": _cmd_master,
            "convergence": _cmd_convergence}


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out
    os.makedirs(out, exist_ok=True)
    manifest_path = os.path.join(out, "manifest.json")
    start = time.perf_counter()
    sc = None
    try:
        sc = Scenario.load(args.scenario).with_overrides(
            T=args.T, s=args.s, K=args.K, grid=args.grid, tol=args.tol,
            max_iters=args.max_iters, h_q=args.h_q, n=args.n, seed=args.seed)
        sc.config()
        code, extra = COMMANDS[args.command](args, sc, out)
        status = "ok" if code == EXIT_OK else "check_failed"
    except (ConfigError, InvalidInputError, UnsupportedCaseError) as exc:
        code, status, extra = EXIT_CONFIG, "invalid_config", {"error": str(exc)}
    except NoConvergenceError as exc:
        code, status = EXIT_NO_CONVERGENCE, "no_convergence"
        extra = {"error": str(exc), "diffs": exc.diffs, "ratios": exc.ratios}
    except InversionError as exc:
        code, status, extra = EXIT_NO_CONVERGENCE, "inversion_failed", {"error": str(exc)}
    except MfgError as exc:
        code, status, extra = EXIT_CHECK, "error", {"error": str(exc)}
    wall = time.perf_counter() - start if args.timing else None
    report.write_json(manifest_path, _manifest(args, sc, status, extra, wall))
    if code != EXIT_OK:
        print(f"mfgchar {args.command}: {status}: {extra.get('error', '')}".rstrip(": "),
              file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
