"""Command-line entry point.

Subcommands: ``run``, ``compare``, ``semigroup-check``, ``sweep``,
``verify-assumptions``. Exit codes: 0 success, 1 a verification check failed
or an unexpected error, 2 invalid configuration, 3 an assumption checker
failed, 4 the solver failed (convergence, CFL, escaping mass, non-finite).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import diagnostics as diag
from .assumptions import check_A2_A3, check_A5, check_H_conditions
from .config import Config, ConfigError, Problem, sweep_points
from .io import write_csv, write_json
from .operators import EnvironmentOperator, norm_E, norm_X, norm_Y
from .record import SolutionRecord, SolverError, escape_ratio

log = logging.getLogger("sizepop")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_SOLVER = 0, 1, 2, 3, 4


class AssumptionFailure(Exception):
    def __init__(self, report: dict):
        self.report = report
        failed = [k for k, v in report.items() if isinstance(v, dict) and not v.get("passed", True)]
        super().__init__(f"assumption checks failed: {', '.join(failed)}")


class CheckFailure(Exception):
    pass


# --------------------------------------------------------------------------
# building blocks


def verify_assumptions(problem: Problem) -> dict:
    m, g, d = problem.model, problem.grid, problem.delay
    a23 = check_A2_A3(m.coeffs, g.x_max)
    op = EnvironmentOperator(m.environment, g)
    worst = None
    for sl in problem.history.slices:
        rep = check_A5(m.coeffs, op(sl), g)
        if worst is None or rep.conditions[0].observed < worst.conditions[0].observed:
            worst = rep
    h = check_H_conditions(m.recruitment, g, d)
    out = {"A2_A3": a23.to_dict(), "A5": worst.to_dict(), "H": h.to_dict()}
    out["passed"] = a23.passed and worst.passed and h.passed
    return out


def norm_rows(rec: SolutionRecord):
    g, d = rec.grid, rec.delay
    for k in range(rec.K + 1):
        n = rec.levels[k]
        yield (rec.times[k], norm_X(n, g), norm_Y(n, g), float(np.max(np.abs(n))),
               norm_E(rec.history(k).slices, d, g))


def density_rows(rec: SolutionRecord, every: int = 1):
    x = rec.grid.nodes
    for k in range(0, rec.K + 1, every):
        t = rec.times[k]
        for xi, v in zip(x, rec.levels[k]):
            yield (t, xi, v)


def solver_meta(rec: SolutionRecord) -> dict:
    meta = dict(rec.meta)
    meta["escape_ratio_max"] = max(escape_ratio(rec.levels[k], rec.grid) for k in range(rec.K + 1))
    return meta


def run_diagnostics(problem: Problem, rec: SolutionRecord, seed: int) -> dict:
    if np.min(problem.history.slices) < 0:
        return {"skipped": "initial history has negative values", "passed": True}
    res = diag.run_all(rec, problem.model, seed=seed)
    settings = problem.config.diagnostics
    if settings["continuous_dependence"]:
        res["continuous_dependence"] = diag.check_continuous_dependence(
            lambda h: problem.solve(history=h), problem.history, settings["epsilons"],
            factor=float(settings["factor"]), base_record=rec)
    res["passed"] = diag.gating_passed(res)
    return res


def _seed(cfg: Config, section: str, override: Optional[int]) -> int:
    return int(override) if override is not None else int(getattr(cfg, section)["seed"])


# --------------------------------------------------------------------------
# subcommands


def cmd_verify(cfg: Config, out: Path, args) -> int:
    problem = cfg.build()
    rep = verify_assumptions(problem)
    write_json(out / "assumptions.json", rep, "assumptions", cfg.sha256)
    for k in ("A2_A3", "A5", "H"):
        print(f"{k}: {'pass' if rep[k]['passed'] else 'FAIL'}")
    if not rep["passed"]:
        raise AssumptionFailure(rep)
    return EXIT_OK


def execute_run(cfg: Config, out: Path, seed: Optional[int], skip_checks: bool, prefix: str = "") -> dict:
    """One configured run with all artifacts; returns the summary dictionary."""
    problem = cfg.build()
    summary = {"version": __version__, "config": cfg.raw, "refine": cfg.refine,
               "grid": {"x_max": problem.grid.x_max, "m": problem.grid.m, "dx": problem.grid.dx},
               "delay": {"tau": problem.delay.tau, "p": problem.delay.p}, "dt": problem.dt, "T": problem.T}
    if not skip_checks:
        checks = verify_assumptions(problem)
        summary["assumptions"] = checks
        if not checks["passed"]:
            write_json(out / f"{prefix}summary.json", summary, "run-summary", cfg.sha256)
            raise AssumptionFailure(checks)
    else:
        summary["assumptions"] = "skipped"
    rec = problem.solve()
    summary["solver"] = solver_meta(rec)
    h = cfg.sha256
    write_csv(out / f"{prefix}density.csv", ["t", "x", "n"],
              density_rows(rec, cfg.solver["snapshot_every"]), "density", h)
    write_csv(out / f"{prefix}norms.csv", ["t", "norm_X", "norm_Y", "sup", "norm_E_history"],
              norm_rows(rec), "norms", h)
    if cfg.diagnostics["enabled"]:
        summary["diagnostics"] = run_diagnostics(problem, rec, _seed(cfg, "diagnostics", seed))
    write_json(out / f"{prefix}summary.json", summary, "run-summary", h)
    summary["_record"] = rec
    return summary


def cmd_run(cfg: Config, out: Path, args) -> int:
    s = execute_run(cfg, out, args.seed, args.skip_checks)
    rec = s["_record"]
    print(f"solved {rec.K} levels with {rec.meta['solver']}; final X-norm {norm_X(rec.levels[-1], rec.grid):.6g}")
    d = s.get("diagnostics")
    if d is not None:
        for k, v in d.items():
            if isinstance(v, dict) and "passed" in v:
                tag = " (informative)" if v.get("informative") else ""
                print(f"  {k}: {'pass' if v['passed'] else 'FAIL'}{tag}")
        if not d["passed"]:
            raise CheckFailure("a gating diagnostic failed")
    return EXIT_OK


def relative_l1(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    num = np.abs(a - b) @ w
    den = np.maximum(np.abs(a) @ w, np.abs(b) @ w)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def compare_solvers(cfg: Config) -> dict:
    """Per-level relative L1 difference at the configured grids and after one joint refinement."""
    out = {}
    for label, c in (("base", cfg), ("refined", cfg.refined(2))):
        problem = c.build()
        rc = problem.solve("characteristics")
        ru = problem.solve("upwind")
        stride = 1 if label == "base" else 2
        diff = relative_l1(rc.levels[::stride], ru.levels[::stride], problem.grid.weights)
        out[label] = {"times": rc.times[::stride], "diff": diff, "final": float(diff[-1]),
                      "max": float(diff.max()), "picard_iterations": rc.meta["picard_iterations"],
                      "max_mass_residual": ru.meta["max_mass_residual"]}
    b, r = out["base"]["final"], out["refined"]["final"]
    out["decreasing"] = bool(r < b) if b > 0 else bool(r == 0)
    out["ratio"] = b / r if r > 0 else None
    return out


def cmd_compare(cfg: Config, out: Path, args) -> int:
    res = compare_solvers(cfg)
    rows = zip(res["base"]["times"], res["base"]["diff"], res["refined"]["diff"])
    write_csv(out / "compare.csv", ["t", "rel_l1_diff", "rel_l1_diff_refined"], rows, "compare", cfg.sha256)
    write_json(out / "compare.json", res, "compare", cfg.sha256)
    print(f"relative L1 difference at T: {res['base']['final']:.4e} -> {res['refined']['final']:.4e} refined")
    return EXIT_OK


def cmd_semigroup(cfg: Config, out: Path, args) -> int:
    from .coefficients import make_coefficients, make_environment
    from .semigroup import run_suite

    raw = cfg.raw
    ct = dict(raw.get("coefficients", {}))
    K = float(ct.get("K", 1.0))
    coeffs = make_coefficients(ct.get("gamma", {"family": "constant", "value": 1.0}),
                               ct.get("mu", {"family": "constant", "value": 0.0}), K)
    rho = make_environment(raw.get("environment", {"family": "constant", "amp": 0.0}))
    settings = cfg.semigroup
    settings["dx"] = settings["dx"] / cfg.refine
    settings["dsigma"] = settings["dsigma"] / cfg.refine
    res = run_suite(settings, coeffs, rho, seed=_seed(cfg, "semigroup", args.seed))
    write_json(out / "semigroup.json", res, "semigroup-check", cfg.sha256)
    for k, v in res["checks"].items():
        print(f"{k}: {'pass' if v else 'FAIL'}")
    if not res["passed"]:
        raise CheckFailure("semigroup inequalities failed")
    return EXIT_OK


SWEEP_COLUMNS = ["index", "status", "exit_code", "final_norm_X", "final_sup", "min_value",
                 "picard_iterations", "max_mass_residual", "L1_min_margin", "history_min_margin",
                 "sup_min_margin", "diagnostics_passed"]


def _sweep_worker(job) -> dict:
    raw, base_dir, refine, overrides, index, out_dir, seed, skip = job
    row = {"index": index, **{f"param:{k}": v for k, v in overrides.items()}}
    try:
        cfg = Config(raw, Path(base_dir), refine).with_overrides(overrides)
        s = execute_run(cfg, Path(out_dir), seed, skip, prefix=f"run_{index:04d}_")
    except ConfigError as exc:
        return {**row, "status": f"config: {exc}", "exit_code": EXIT_CONFIG}
    except AssumptionFailure:
        return {**row, "status": "assumption", "exit_code": EXIT_ASSUMPTION}
    except SolverError as exc:
        return {**row, "status": f"solver: {type(exc).__name__}", "exit_code": EXIT_SOLVER}
    rec = s["_record"]
    d = s.get("diagnostics", {})
    it = rec.meta.get("picard_iterations")

    def margin(name):
        for k, v in d.items():
            if k.startswith(name) and isinstance(v, dict) and "min_margin" in v:
                return v["min_margin"]
        return float("nan")

    row.update(status="ok", exit_code=EXIT_OK, final_norm_X=norm_X(rec.levels[-1], rec.grid),
               final_sup=float(np.max(np.abs(rec.levels[-1]))), min_value=float(rec.levels.min()),
               picard_iterations=int(sum(it)) if it else 0,
               max_mass_residual=float(rec.meta.get("max_mass_residual", float("nan"))),
               L1_min_margin=margin("L1_bound"), history_min_margin=margin("history_bound"),
               sup_min_margin=margin("sup_bound"), diagnostics_passed=bool(d.get("passed", True)))
    return row


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("SIZEPOP_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n_jobs, limit))


def cmd_sweep(cfg: Config, out: Path, args) -> int:
    params = cfg.sweep_parameters
    points = sweep_points(params) if params else [{}]
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.raw, str(cfg.base_dir), cfg.refine, pt, i, str(runs), args.seed, args.skip_checks)
            for i, pt in enumerate(points)]
    n = worker_count(len(jobs))
    if n == 1:
        rows = [_sweep_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as ex:
            rows = list(ex.map(_sweep_worker, jobs))
    cols = ["index"] + [f"param:{k}" for k in params] + SWEEP_COLUMNS[1:]
    write_csv(out / "sweep.csv", cols, ([r.get(c, "") for c in cols] for r in rows), "sweep", cfg.sha256)
    bad = [r for r in rows if r["exit_code"] != EXIT_OK]
    print(f"sweep: {len(rows)} runs, {len(bad)} failed")
    return EXIT_FAIL if bad else EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "semigroup-check": cmd_semigroup,
            "sweep": cmd_sweep, "verify-assumptions": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sizepop", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sizepop {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="TOML configuration file")
        s.add_argument("--out", default="out", help="output directory (default: out)")
        s.add_argument("--seed", type=int, default=None, help="seed for randomized batteries")
        s.add_argument("--skip-checks", action="store_true", help="skip the assumption checkers")
        s.add_argument("--refine", type=int, default=1, help="divide dx and dt by this factor")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not (0 <= args.seed < 2**64):
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = Config.load(args.config, refine=args.refine)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ASSUMPTION
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
