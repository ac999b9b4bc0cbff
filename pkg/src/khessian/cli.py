"""Command-line front end: ``khessian <subcommand> [--config PATH] [--seed N] ...``.

Every subcommand writes ``report.json`` and one CSV per table into the output
directory.  The exit code is 0 when the suite found no contract violations, 1
when it found some, and 2 for usage or configuration errors (the
configuration problems are printed to stderr as JSON).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, suites
from .config import ConfigError, affine_reduce, load_config
from .exceptions import ContractViolation, DomainError
from .geometry import BoundaryData, EllipsoidDomain, Polynomial
from .subsolution import GeneralizedSubsolution
from .symfun import AdmissibleMatrix, HessianParams, cstar

log = logging.getLogger("khessian")

EXIT_OK, EXIT_VIOLATIONS, EXIT_USAGE = 0, 1, 2

NEEDS_CONFIG = {"barrier-build", "constants", "solve"}


def make_rng(seed):
    """All randomness of a run: a Philox counter-based stream keyed by one 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    return obj


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment configuration (TOML)")
    common.add_argument("--seed", type=int, help="64-bit seed for all random draws (default: config or 0)")
    common.add_argument("--out", type=Path, help="output directory (default: config or ./out)")
    common.add_argument("--h", type=float, help="grid spacing for the grid solver")
    common.add_argument("--trials", type=int, help="number of random trials")
    common.add_argument("--samples", type=int, help="sample points per trial")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="khessian", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("symcheck", parents=[common], help="symmetric-function identities and bounds")
    s.add_argument("--n", type=int)
    s.add_argument("--k", type=int)
    sub.add_parser("identity-check", parents=[common], help="rank-one spectral identity vs the eigen oracle")
    sub.add_parser("subsolution-verify", parents=[common], help="subsolution inequalities on random members")
    sub.add_parser("rigidity", parents=[common], help="A_k^i spread and witness pairs")
    sub.add_parser("barrier-build", parents=[common], help="boundary barriers for the configured domain")
    sub.add_parser("constants", parents=[common], help="beta, bhat, alphahat, the threshold and the sandwich")
    sub.add_parser("solve", parents=[common], help="grid solution of the truncated exterior problem (n = 3)")
    d = sub.add_parser("decay", parents=[common], help="far-field decay slopes")
    d.add_argument("--grid", action="store_true", help="also fit the decay of a grid solution")
    return p


# -- subcommand bodies ------------------------------------------------------------------


def _reduced(cfg):
    red = affine_reduce(cfg)
    A = red.config.admissible_matrix()
    return red, red.config.domain(), red.phi, A


def _default_sbar(D, A, cfg):
    if cfg.sbar is not None:
        return cfg.sbar
    return 2.0 * D.max_quadratic_level(A.a)


def _config_member(cfg):
    red = affine_reduce(cfg)
    a = np.diag(red.config.A).copy()
    return GeneralizedSubsolution(HessianParams.from_vector(a, cfg.k), 1.0)


def run_symcheck(args, cfg, rng):
    n = args.n or (cfg.n if cfg else 5)
    k = args.k or (cfg.k if cfg else 3)
    return suites.symcheck(rng, n, k, args.trials or (cfg.trials if cfg else 1000))


def run_identity(args, cfg, rng):
    return suites.identity_check(rng, args.trials or (cfg.trials if cfg else 10_000))


def run_subsolution(args, cfg, rng):
    extra = [_config_member(cfg)] if cfg and cfg.n >= 3 and cfg.k >= 2 else None
    return suites.subsolution_verify(rng, args.trials or 100, args.samples or (cfg.samples if cfg else 1000), extra)


def run_rigidity(args, cfg, rng):
    return suites.rigidity(rng, args.trials or 100)


def run_barrier(args, cfg, rng):
    red, D, phi, A = _reduced(cfg)
    res = suites.barrier_suite(D, phi, A, rng)
    res.summary["transform"] = red.transform.O.tolist()
    return res


def run_constants(args, cfg, rng):
    red, D, phi, A = _reduced(cfg)
    res, _, _ = suites.constants_suite(D, phi, A, _default_sbar(D, A, cfg), cfg.c, cfg.c_margin, rng,
                                       samples=args.samples or 100_000)
    return res


def _grid_run(D, phi, A, sbar, c, c_margin, h, S_out, rng, outer=None):
    from .barrier import proof_constants, sandwich
    from .grid import build_grid
    from .solver import decay_rate, harmonic_upper_barrier, solve

    pc = proof_constants(D, phi, A, sbar)
    c = pc.cstar_threshold + c_margin if c is None else c
    sw = sandwich(D, phi, A, c, pc, rng=rng)
    S_out = 50.0 * sbar if S_out is None else S_out
    grid = build_grid(D, A.a, S_out, h)
    log.info("grid h=%g, S_out=%g, %d unknowns", h, S_out, grid.n_unknowns)
    field, rep = solve(grid, A, A.k, phi, c, sw, outer=outer)
    fit = decay_rate(field, A, c)
    rep.decay_slope = fit.slope
    harm = harmonic_upper_barrier(grid, sbar, phi, c)
    both = harm.mask.reshape(-1) & np.isfinite(field.values.reshape(-1))
    excess = field.values.reshape(-1)[both] - harm.values.reshape(-1)[both]
    return pc, sw, grid, field, rep, fit, float(np.max(excess, initial=-np.inf))


def _solve_result(name, pc, sw, field, rep, fit, harm_excess, h, transform=None):
    # the grid solution is subharmonic, so it stays below the harmonic barrier up to O(h^2)
    violations = (int(not rep.converged) + rep.sandwich_violations + int(not rep.gamma_k_ok)
                  + int(harm_excess > h**2))
    summary = {
        "constants": pc.to_record(), "c": sw.c, "alpha_c": sw.omega.alpha,
        "solve": {k: v for k, v in rep.to_record().items() if k != "linear_info"},
        "decay": {"slope": fit.slope, "expected": fit.expected, "indeterminate": fit.indeterminate,
                  "r_range": list(fit.r_range), "nodes": fit.n_nodes},
        "harmonic_excess_max": harm_excess,
        "harmonic_excess_over_h2": harm_excess / h**2,
    }
    table = field.to_table()
    header = ["y0", "y1", "y2", "v", "tag"]
    rows = table.tolist()
    if transform is not None:
        X = transform.from_reduced(table[:, :3])
        u = table[:, 3] + X @ transform.b
        header = ["y0", "y1", "y2", "v", "x0", "x1", "x2", "u", "tag"]
        rows = np.column_stack([table[:, :4], X, u, table[:, 4]]).tolist()
    rows = [r[:-1] + [int(r[-1])] for r in rows]
    hist = [[i, r] for i, r in enumerate(rep.residual_history)]
    return suites.SuiteResult(name, violations, summary, {
        "solution": (header, rows), "residuals": (["iteration", "residual_inf"], hist)})


def run_solve(args, cfg, rng):
    red, D, phi, A = _reduced(cfg)
    if cfg.n != 3:
        raise DomainError("the grid solver is three-dimensional (n = 3)")
    h = args.h or cfg.h
    pc, sw, grid, field, rep, fit, hx = _grid_run(D, phi, A, _default_sbar(D, A, cfg), cfg.c, cfg.c_margin,
                                                  h, cfg.S_out, rng)
    return _solve_result("solve", pc, sw, field, rep, fit, hx, h, red.transform)


def decay_fixture(h=0.25, r_out=10.0, sbar=0.35, c_margin=0.5, rng=None):
    """Ball of radius 1, phi = 0 and A = c* I in three dimensions (k = 2), grid decay fit."""
    cs = cstar(3, 2)
    D = EllipsoidDomain.ball(3)
    phi = BoundaryData(D, Polynomial.constant(3, 0.0))
    A = AdmissibleMatrix(np.full(3, cs), 2)
    return _grid_run(D, phi, A, sbar, None, c_margin, h, 0.5 * cs * r_out**2, rng or make_rng(0))


def run_decay(args, cfg, rng):
    extra = [_config_member(cfg)] if cfg and cfg.n >= 3 and cfg.k >= 2 else None
    res = suites.decay_table(rng, args.trials or 20, extra)
    if args.grid:
        if cfg is not None and cfg.n == 3:
            red, D, phi, A = _reduced(cfg)
            pc, sw, grid, field, rep, fit, hx = _grid_run(D, phi, A, _default_sbar(D, A, cfg), cfg.c,
                                                          cfg.c_margin, args.h or cfg.h, cfg.S_out, rng)
        else:
            pc, sw, grid, field, rep, fit, hx = decay_fixture(h=args.h or 0.25, rng=rng)
        ok = rep.converged and not fit.indeterminate and fit.rel_error <= 0.15
        res.violations += int(not ok)
        res.summary["grid"] = {"slope": fit.slope, "expected": fit.expected, "rel_error": fit.rel_error,
                               "indeterminate": fit.indeterminate, "converged": rep.converged,
                               "h": grid.h, "S_out": grid.S_out, "unknowns": grid.n_unknowns}
        res.tables["decay"][1].append(["grid", 3, 2, -fit.expected, fit.expected, fit.slope,
                                       fit.rel_error, ok])
    return res


COMMANDS = {
    "symcheck": run_symcheck,
    "identity-check": run_identity,
    "subsolution-verify": run_subsolution,
    "rigidity": run_rigidity,
    "barrier-build": run_barrier,
    "constants": run_constants,
    "solve": run_solve,
    "decay": run_decay,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = None
    if args.config is not None:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError:
            parser.error(f"config file not found: {args.config}")
        except ConfigError as exc:
            if any(p["field"] == "<root>" for p in exc.problems):
                parser.error(f"{args.config}: empty configuration")
            print(json.dumps({"error": "config", "path": str(args.config), "problems": exc.problems}),
                  file=sys.stderr)
            return EXIT_USAGE
    if args.command in NEEDS_CONFIG and cfg is None:
        parser.error(f"{args.command} needs --config")
    for name in ("trials", "samples"):
        v = getattr(args, name)
        if v is not None and v <= 0:
            parser.error(f"--{name} must be positive")
    if args.h is not None and not args.h > 0:
        parser.error("--h must be positive")
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    if not 0 <= seed < 2**64:
        parser.error("--seed must lie in [0, 2^64)")
    out = args.out or Path(cfg.out if cfg else "out")
    out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(seed)

    t0 = time.perf_counter()
    try:
        result = COMMANDS[args.command](args, cfg, rng)
    except (DomainError, ContractViolation) as exc:
        report = {"command": args.command, "seed": seed, "passed": False, "error": str(exc),
                  "point": getattr(exc, "point", None)}
        (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2) + "\n")
        print(f"{args.command}: FAIL ({exc})", file=sys.stderr)
        return EXIT_VIOLATIONS
    for name, (header, rows) in result.tables.items():
        write_csv(out / f"{name}.csv", header, rows)
    report = {
        "command": args.command,
        "version": __version__,
        "seed": seed,
        "passed": result.passed,
        "violations": result.violations,
        "summary": result.summary,
        "tables": sorted(f"{n}.csv" for n in result.tables),
        "config": cfg.to_record() if cfg else None,
        "runtime_seconds": time.perf_counter() - t0,
    }
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2) + "\n")
    print(f"{args.command}: {'PASS' if result.passed else 'FAIL'} "
          f"({result.violations} violation(s)); report in {out / 'report.json'}")
    return EXIT_OK if result.passed else EXIT_VIOLATIONS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
