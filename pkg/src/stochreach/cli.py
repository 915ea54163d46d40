"""Batch front end: ``stochreach run <scenario> [options]``.

Solves the capture-time/position problem for a scenario, validates every step
against a particle simulation and writes CSV tables into the output directory:

``per_tau.csv``
    tau, feasible, prob, prob_mc, mc_stderr, center_x, center_y, wall_ms
``plan.csv``
    record, step, x, y, prob -- one ``target`` row, then ``input`` rows (the
    input applied at each step) and ``position`` rows (the pursuer after it)
``density_tau<k>.csv``
    x, y, psi on a grid (closed form for Gaussian targets, particle histogram
    otherwise)
``reach_tau<k>.csv`` / ``capture_tau<k>.csv``
    x, y corners of the pursuer reach box and of the optimal capture box

Exit codes: 0 success, 2 invalid input, 3 quadrature did not converge.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .capture import CaptureBox
from .errors import (
    InfeasibleTargetError,
    NonConvergenceError,
    ShapeError,
    StepRangeError,
    UnsupportedError,
    ValidationError,
)
from .fsr import GridSpec, fsrpd
from .linsys import pursuer_reach_set
from .mc import empirical_capture, empirical_density_grid, simulate_all
from .planner import solve_prob_b
from .scenario import CI_QUAD, Scenario, load_scenario

log = logging.getLogger("stochreach")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3
PER_TAU_HEADER = ["tau", "feasible", "prob", "prob_mc", "mc_stderr", "center_x", "center_y", "wall_ms"]
PLAN_HEADER = ["record", "step", "x", "y", "prob"]


def _fmt(v) -> str:
    return f"{float(v):.10g}"


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _box_corners(lower, upper):
    """Counter-clockwise corners of a planar box."""
    (x0, y0), (x1, y1) = lower, upper
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _write_density(path, scen: Scenario, tau, cloud):
    problem = scen.problem
    f = fsrpd(problem.system, problem.law, problem.x0, tau).position_marginal()
    pos = cloud.position_samples
    if f.kind == "gaussian":
        center, sd = f.mean, np.sqrt(np.diag(f.cov))
    else:
        center, sd = pos.mean(axis=0), pos.std(axis=0)
    sd = np.where(sd > 0, sd, 1e-3)
    grid = GridSpec(center - scen.grid_width * sd, center + scen.grid_width * sd, scen.grid_num)
    pts = grid.points()
    if f.kind == "gaussian":
        psi = f.pdf(pts)
    else:
        psi = empirical_density_grid(cloud, grid, min_coverage=0.0)
    rows = [(_fmt(x), _fmt(y), _fmt(p)) for (x, y), p in zip(pts.reshape(-1, 2), psi.reshape(-1))]
    _write_csv(path, ["x", "y", "psi"], rows)


def run(scen: Scenario, out: Path, best_effort: bool = False) -> int:
    problem = scen.problem
    q = scen.quad.with_(strict=not best_effort)
    plan = solve_prob_b(problem, q, scen.opt, scen.separable)
    T = problem.system.T
    clouds = simulate_all(problem.system, problem.law, problem.x0, T, scen.mc_particles, scen.seed)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for row, cloud in zip(plan.rows, clouds):
        p_mc, se = empirical_capture(cloud, CaptureBox(row.center, problem.half_width))
        rows.append([
            row.tau, "feasible" if row.feasible else "infeasible", _fmt(row.probability),
            _fmt(p_mc), _fmt(se), _fmt(row.center[0]), _fmt(row.center[1]), f"{row.wall_ms:.1f}",
        ])
    _write_csv(out / "per_tau.csv", PER_TAU_HEADER, rows)

    plan_rows = []
    if plan.tau_star is not None:
        plan_rows.append(["target", plan.tau_star, _fmt(plan.center[0]), _fmt(plan.center[1]),
                          _fmt(plan.probability)])
        x = problem.pursuer.x0.copy()
        plan_rows.append(["position", 0, _fmt(x[0]), _fmt(x[1]), ""])
        for t, u in enumerate(plan.controls):
            plan_rows.append(["input", t, _fmt(u[0]), _fmt(u[1]), ""])
            x = x + problem.pursuer.B_R @ u
            plan_rows.append(["position", t + 1, _fmt(x[0]), _fmt(x[1]), ""])
    _write_csv(out / "plan.csv", PLAN_HEADER, plan_rows)

    for k in scen.snapshots:
        _write_density(out / f"density_tau{k}.csv", scen, k, clouds[k - 1])
        reach = pursuer_reach_set(problem.pursuer, k).box_bounds()
        _write_csv(out / f"reach_tau{k}.csv", ["x", "y"],
                   [(_fmt(x), _fmt(y)) for x, y in _box_corners(*reach)])
        box = CaptureBox(plan.rows[k - 1].center, problem.half_width)
        _write_csv(out / f"capture_tau{k}.csv", ["x", "y"],
                   [(_fmt(x), _fmt(y)) for x, y in _box_corners(box.lower, box.upper)])

    pruned = [r.tau for r in plan.rows if not r.feasible]
    if plan.tau_star is None:
        print(f"{scen.name}: {plan.status}; infeasible steps {pruned}; outputs in {out}")
        return EXIT_OK
    unconverged = [r.tau for r in plan.rows if r.feasible and r.residual > scen.quad.tol]
    print(
        f"{scen.name}: tau*={plan.tau_star} prob={plan.probability:.4f} "
        f"center=[{plan.center[0]:.4f}, {plan.center[1]:.4f}] infeasible steps {pruned}"
        + (f" unconverged steps {unconverged}" if unconverged else "")
        + f"; outputs in {out}"
    )
    return EXIT_OK


def read_plan(path: Path):
    """Return ``(tau_star, center)`` from the target row of a plan file."""
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec.get("record") == "target":
                return int(rec["step"]), np.array([float(rec["x"]), float(rec["y"])])
    raise ValidationError(f"{path}: no target row")


def run_mc_only(scen: Scenario, plan_path: Path, out: Path) -> int:
    problem = scen.problem
    tau, center = read_plan(plan_path)
    problem.system.check_step(tau)
    clouds = simulate_all(problem.system, problem.law, problem.x0, tau, scen.mc_particles, scen.seed)
    p_mc, se = empirical_capture(clouds[-1], CaptureBox(center, problem.half_width))
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "mc_validation.csv", ["tau", "center_x", "center_y", "prob_mc", "mc_stderr"],
               [[tau, _fmt(center[0]), _fmt(center[1]), _fmt(p_mc), _fmt(se)]])
    print(f"{scen.name}: tau={tau} prob_mc={p_mc:.4f} +- {se:.4f} (N={scen.mc_particles}); outputs in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochreach", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="plan, validate and write CSV outputs for a scenario")
    r.add_argument("scenario", help="scenario file, or a bundled name (gauss_pm, exp_di)")
    r.add_argument("--out", help="output directory (default: the scenario's output.dir)")
    r.add_argument("--seed", type=int, help="Monte-Carlo seed")
    r.add_argument("--mc-particles", type=int, help="Monte-Carlo particle count")
    r.add_argument("--profile", choices=["default", "ci"],
                   help="quadrature profile; ci uses fewer nodes and a looser tolerance")
    r.add_argument("--best-effort", action="store_true",
                   help="keep going (exit 0) when a quadrature misses its tolerance")
    r.add_argument("--mc-only", metavar="PLAN", help="only simulate the target row of a plan.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        scen = load_scenario(args.scenario)
        if args.seed is not None:
            if args.seed < 0:
                raise ValidationError("--seed must be nonnegative")
            scen = scen.with_(seed=args.seed)
        if args.mc_particles is not None:
            if args.mc_particles < 1:
                raise ValidationError("--mc-particles must be positive")
            scen = scen.with_(mc_particles=args.mc_particles)
        if args.profile == "ci":
            scen = scen.with_(quad=scen.quad.with_(**CI_QUAD))
        out = Path(args.out or scen.out_dir)
        if args.mc_only:
            return run_mc_only(scen, Path(args.mc_only), out)
        return run(scen, out, args.best_effort)
    except NonConvergenceError as exc:
        print(f"error: {exc} (rerun with --best-effort to accept)", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (ValidationError, ShapeError, StepRangeError, UnsupportedError, InfeasibleTargetError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
