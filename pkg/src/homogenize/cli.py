"""Command-line front end: ``homogenize {cell,solve,sweep,check}``.

Exit codes: 0 success, 1 tolerance failure, 2 config error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks
from .cell import (SolverError, check_cell_bounds, load_cell_solution, save_cell_solution,
                   solve_cell_problem)
from .config import ConfigError, RunConfig, bundled_configs, load_config
from .harness import (SweepError, check_bands, emit_report, eps_thresholds, extension_margin,
                      run_sweep, sweep_row, sweep_source)
from .lattice import CellGrid, Lattice, RankConditionError

EXIT_OK, EXIT_TOLERANCE, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("homogenize")


def _matrix_text(a, indent="  ") -> str:
    a = np.real_if_close(np.asarray(a))
    return "\n".join(indent + "  ".join(f"{x: .10f}" for x in row) for row in a)


def _cache_path(rc: RunConfig, out: Path) -> Path:
    if rc.get("output", "cache"):
        return Path(rc.get("output", "cache"))
    key = repr(sorted((s, sorted(rc.raw[s].items())) for s in ("coefficient", "symbol", "cell")))
    return out / f"cell-{hashlib.sha1(key.encode()).hexdigest()[:12]}.txt"


def _cell_solution(rc: RunConfig, b, g, out: Path, use_cache=True):
    path = _cache_path(rc, out)
    res = rc.number("cell", "resolution", int)
    if use_cache and path.exists():
        sol = load_cell_solution(path)
        if sol.grid.resolution == res and sol.m == b.m and sol.n == b.n:
            log.info("cell cache=%s", path)
            return sol, path
    sol = solve_cell_problem(g, b, CellGrid(res, b.d), method=rc.get("cell", "method"))
    path.parent.mkdir(parents=True, exist_ok=True)
    save_cell_solution(sol, path)
    return sol, path


def cmd_cell(rc: RunConfig, args) -> int:
    b, g = rc.problem()
    out = Path(args.out or rc.get("output", "dir"))
    sol, path = _cell_solution(rc, b, g, out, use_cache=False)
    rep = check_cell_bounds(sol, Lattice.cubic(b.d), b, g)
    mean_ok = rep.mean_defect <= 1e-10 * sol.lambda_l2 + 1e-14
    pd = float(np.linalg.eigvalsh(sol.g_eff).min()) > 0
    print(f"coefficient: {g.name}  symbol: d={b.d} m={b.m} n={b.n}  "
          f"alpha0={b.alpha0:.6g} alpha1={b.alpha1:.6g}")
    print(f"cell solver: {sol.method} resolution={sol.grid.resolution} residual={sol.residual:.3e} "
          f"g_eff change vs half resolution={sol.error_estimate:.3e}")
    print("g_eff =")
    print(_matrix_text(sol.g_eff))
    print(f"||Lambda||_L2 = {sol.lambda_l2:.10f}")
    print(f"bound ||Lambda||_L2 <= {rep.bound:.6f} (M = {rep.M:.6f}): {'ok' if rep.ok else 'VIOLATED'}")
    print(f"zero mean: max |mean Lambda| = {rep.mean_defect:.3e}: {'ok' if mean_ok else 'VIOLATED'}")
    print(f"cached: {path}")
    return EXIT_OK if (rep.ok and mean_ok and pd) else EXIT_TOLERANCE


def cmd_solve(rc: RunConfig, args) -> int:
    cfg = rc.sweep_config()
    eps = rc.number("sweep", "eps")
    eps2, _ = eps_thresholds(cfg.eps1, cfg.lattice)
    if not 0 < eps <= eps2:
        raise ConfigError(f"sweep.eps = {eps:g} outside the admissible range 0 < eps <= eps2 = {eps2:.6g}")
    out = Path(args.out or rc.get("output", "dir"))
    sol, _ = _cell_solution(rc, cfg.symbol, cfg.coefficient, out)
    F = sweep_source(cfg, sol)
    row = sweep_row(cfg, sol, eps, cfg.mesh_ratio, F, extension_margin(eps, cfg.lattice))
    for k, v in vars(row).items():
        print(f"{k} = {v:.6g}" if isinstance(v, float) else f"{k} = {v}")
    return EXIT_OK


def cmd_sweep(rc: RunConfig, args) -> int:
    cfg = rc.sweep_config()
    checks_, bands, audit_max = rc.bands()
    if "audit" in checks_:
        cfg.audit = True
    out = Path(args.out or rc.get("output", "dir"))
    sol, _ = _cell_solution(rc, cfg.symbol, cfg.coefficient, out)
    report = run_sweep(cfg, sol, progress=print if args.verbose else None)
    results = check_bands(report, checks_, bands, audit_max)
    files = emit_report(report, out, results)
    print("eps          e_l2         e_h1corr     e_full       w_l2")
    for r in report.rows:
        print(f"{r.eps:<12.6g} {r.e_l2:<12.4e} {r.e_h1corr:<12.4e} {r.e_full:<12.4e} {r.w_l2:<12.4e}")
    for name, fit in report.slopes.items():
        print(f"slope {name:<9s} {fit.slope:.4f}")
    for flag in report.flags:
        print(flag)
    for r in results:
        print(r.line())
    print(f"report: {files['table']}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_TOLERANCE


def cmd_check(rc: RunConfig, args) -> int:
    b, g = rc.problem()
    seed = args.seed if args.seed is not None else rc.number("source", "seed", int)
    results, seconds = checks.timed_checks(b, g, seed=seed,
                                           corrupt_lambda_mean=args.corrupt_lambda_mean)
    for r in results:
        if args.verbose:
            print(r.line())
        else:
            print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}")
    failed = sum(not r.ok for r in results)
    print(f"{len(results) - failed}/{len(results)} invariants passed in {seconds:.1f}s")
    return EXIT_OK if failed == 0 else EXIT_TOLERANCE


COMMANDS = {"cell": cmd_cell, "solve": cmd_solve, "sweep": cmd_sweep, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homogenize", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=sorted(COMMANDS))
    p.add_argument("--config", help="config file path or the name of a bundled config")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="random seed (overrides source.seed)")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--corrupt-lambda-mean", action="store_true",
                   help="fault injection for 'check': shift Lambda by a constant")
    return p


def _resolve_config(name):
    if name is None:
        return None
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_configs()
    key = name if name.endswith(".cfg") else name + ".cfg"
    if key in bundled:
        return bundled[key]
    raise ConfigError(f"config {name!r} not found (bundled: {', '.join(sorted(bundled))})")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"source.seed={args.seed}")
        rc = load_config(_resolve_config(args.config), overrides)
        return COMMANDS[args.verb](rc, args)
    except (ConfigError, RankConditionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SweepError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
