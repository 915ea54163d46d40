"""Pursuit planning: where and when to intercept the stochastic target.

For every step ``tau`` the pursuer maximises the log capture probability over
its reach box (a convex problem when the target's law is log-concave). The
best step over the horizon is then picked by exhaustive comparison, and the
open-loop input sequence reaching the chosen position is recovered.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .capture import CaptureEvaluator, feasible_region
from .errors import InfeasibleTargetError, UnsupportedError, ValidationError
from .fsr import Fsrpd, fsr_set, fsrpd
from .linsys import LtiSystem, Pursuer, pursuer_reach_set
from .polytope import Polytope
from .quad import QuadConfig
from .randvec import DisturbanceLaw

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptConfig:
    """Settings for the per-step capture maximisation.

    ``epsilon`` is the probability floor below which a position counts as
    infeasible (the log objective is undefined at zero). Derivatives are taken
    by central differences with step ``fd_step``. The ascent stops when the
    projected gradient norm drops below ``gtol`` or the step below ``xtol``;
    ``patience`` iterations without improvement end it with status ``stall``.
    """

    epsilon: float = 1e-10
    max_iter: int = 100
    patience: int = 10
    fd_step: float = 1e-4
    gtol: float = 1e-7
    xtol: float = 1e-10
    multistart: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if self.max_iter < 1 or self.patience < 1 or self.multistart < 1:
            raise ValidationError("max_iter, patience and multistart must be positive")
        if not self.fd_step > 0:
            raise ValidationError("fd_step must be positive")


@dataclass(frozen=True)
class ProbCResult:
    center: np.ndarray
    probability: float
    residual: float
    status: str
    iterations: int
    evaluations: int


def initial_guess(f: Fsrpd, reach: Polytope) -> np.ndarray:
    """Project the mean target position onto the reach set."""
    pos = f.position_marginal()
    if pos.kind == "gaussian":
        mean = pos.mean
    else:
        from .quad import cf_moments

        mean, _ = cf_moments(pos.cf, pos.dim)
    return reach.project(mean)


def _bounding_box(reach: Polytope):
    box = reach.box_bounds()
    if box is not None:
        return box
    v = reach.vertices()
    if v.size == 0:
        raise UnsupportedError("reach set is empty")
    return v.min(axis=0), v.max(axis=0)


class _Objective:
    """``log P(center)`` with evaluation bookkeeping; ``-inf`` below epsilon."""

    def __init__(self, evaluator: CaptureEvaluator, epsilon: float):
        self.evaluator = evaluator
        self.epsilon = epsilon
        self.calls = 0

    def prob(self, x):
        self.calls += 1
        return self.evaluator(x)

    def __call__(self, x):
        p = self.prob(x).value
        return math.log(p) if p >= self.epsilon else -math.inf


def _fd_derivatives(phi, x, fx, h):
    """Central-difference gradient and Hessian in 2-D (one-sided where needed)."""
    n = x.size
    g = np.zeros(n)
    H = np.zeros((n, n))
    e = np.eye(n) * h
    fp = np.array([phi(x + e[i]) for i in range(n)])
    fm = np.array([phi(x - e[i]) for i in range(n)])
    for i in range(n):
        if np.isfinite(fp[i]) and np.isfinite(fm[i]):
            g[i] = (fp[i] - fm[i]) / (2 * h)
            H[i, i] = (fp[i] - 2 * fx + fm[i]) / h**2
        elif np.isfinite(fp[i]):
            g[i] = (fp[i] - fx) / h
        elif np.isfinite(fm[i]):
            g[i] = (fx - fm[i]) / h
    for i in range(n):
        for j in range(i + 1, n):
            vals = [phi(x + si * e[i] + sj * e[j]) for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
            if all(np.isfinite(vals)):
                H[i, j] = H[j, i] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * h * h)
    return g, H


def _projected_newton(phi, x, lower, upper, project, opt: OptConfig):
    """Maximise ``phi`` from ``x``; returns ``(x, fx, iterations, converged)``."""
    fx = phi(x)
    width = float(np.max(upper - lower)) if np.all(np.isfinite(upper - lower)) else 1.0
    width = width if width > 0 else 1.0
    stale = 0
    for it in range(1, opt.max_iter + 1):
        g, H = _fd_derivatives(phi, x, fx, opt.fd_step)
        bound_tol = 1e-12 * max(1.0, width)
        active = ((x <= lower + bound_tol) & (g < 0)) | ((x >= upper - bound_tol) & (g > 0))
        free = ~active
        pg = np.where(free, g, 0.0)
        if np.linalg.norm(pg) <= opt.gtol:
            return x, fx, it, True
        d = np.zeros_like(x)
        Hf = H[np.ix_(free, free)]
        newton = False
        if free.any():
            try:
                eig = np.linalg.eigvalsh(Hf)
                if np.all(eig < 0):
                    d[free] = -np.linalg.solve(Hf, g[free])
                    newton = True
            except np.linalg.LinAlgError:
                pass
        if not newton:
            d = pg / np.linalg.norm(pg) * 0.25 * width
        step = 1.0
        accepted = False
        while step > 1e-14:
            xn = project(x + step * d)
            fn = phi(xn)
            if np.isfinite(fn) and fn >= fx + 1e-4 * float(g @ (xn - x)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if newton:
                # fall back to the projected gradient direction once
                d = pg / np.linalg.norm(pg) * 0.25 * width
                step = 1.0
                while step > 1e-14:
                    xn = project(x + step * d)
                    fn = phi(xn)
                    if np.isfinite(fn) and fn >= fx + 1e-4 * float(g @ (xn - x)):
                        accepted = True
                        break
                    step *= 0.5
            if not accepted:
                return x, fx, it, np.linalg.norm(pg) <= 1e3 * opt.gtol
        moved = float(np.linalg.norm(xn - x))
        gain = fn - fx
        x, fx = xn, fn
        if moved <= opt.xtol * max(1.0, width):
            return x, fx, it, True
        stale = stale + 1 if gain <= 1e-14 * max(1.0, abs(fx)) else 0
        if stale >= opt.patience:
            return x, fx, it, False
    return x, fx, opt.max_iter, False


def _starts(first, lower, upper, opt: OptConfig):
    starts = [first]
    if opt.multistart > 1:
        rng = np.random.default_rng(opt.seed)
        mid = 0.5 * (lower + upper)
        fixed = [mid] + [np.array(c) for c in np.array(np.meshgrid(*zip(lower, upper))).T.reshape(-1, lower.size)]
        for c in fixed:
            if len(starts) >= opt.multistart:
                break
            starts.append(0.75 * c + 0.25 * mid)
        while len(starts) < opt.multistart:
            starts.append(lower + rng.random(lower.size) * (upper - lower))
    return starts


def solve_prob_c(f: Fsrpd, reach: Polytope, half_width: float, q: QuadConfig = QuadConfig(),
                 opt: OptConfig = OptConfig(), separable: bool | None = None,
                 evaluator: CaptureEvaluator | None = None) -> ProbCResult:
    """Maximise ``log P{target in Box(center, a)}`` over centers in ``reach``.

    Status is ``optimal`` (converged, log-concave law), ``local_only``
    (converged, no log-concavity guarantee), ``stall`` (no progress) or
    ``infeasible`` (no start attains ``opt.epsilon``).
    """
    lower, upper = _bounding_box(reach)
    if evaluator is None:
        evaluator = CaptureEvaluator(f, half_width, (lower, upper), q, separable)
    phi = _Objective(evaluator, opt.epsilon)
    project = reach.project
    rng = np.random.default_rng(opt.seed)

    best = None
    total_iter = 0
    for start in _starts(initial_guess(f, reach), lower, upper, opt):
        x = project(start)
        fx = phi(x)
        tries = 0
        while not np.isfinite(fx) and tries < 20:
            # perturbed projections; the spread grows with each retry
            jitter = (rng.random(x.size) - 0.5) * (upper - lower) * (tries + 1) / 10
            x = project(start + jitter)
            fx = phi(x)
            tries += 1
        if not np.isfinite(fx):
            continue
        refinements = evaluator.refinements
        xo, fo, it, ok = _projected_newton(phi, x, lower, upper, project, opt)
        if evaluator.refinements != refinements:
            # the quadrature grid changed mid-run; polish on the final grid
            xo, fo, it2, ok = _projected_newton(phi, xo, lower, upper, project, opt)
            it += it2
        total_iter += it
        if best is None or fo > best[1]:
            best = (xo, fo, ok)
    if best is None:
        x = project(initial_guess(f, reach))
        r = phi.prob(x)
        return ProbCResult(x, r.value, r.residual, "infeasible", total_iter, phi.calls)
    x, fx, ok = best
    r = phi.prob(x)
    if not ok:
        status = "stall"
    elif f.log_concave:
        status = "optimal"
    else:
        status = "local_only"
    return ProbCResult(x, r.value, r.residual, status, total_iter, phi.calls)


def recover_controls(p: Pursuer, tau_star: int, target, objective: str = "feasibility",
                     R=None) -> np.ndarray:
    """Input sequence ``(tau_star, 2)`` in ``U`` that moves the pursuer to ``target``.

    ``feasibility`` splits the displacement evenly over the steps; ``min_effort``
    minimises ``pi^T R pi`` over the stacked inputs ``pi``.
    """
    target = np.asarray(target, dtype=float).reshape(2)
    reach = pursuer_reach_set(p, tau_star)
    scale = max(1.0, float(np.max(np.abs(reach.k))))
    if not reach.contains(target, tol=1e-9 * scale):
        raise InfeasibleTargetError(f"target {target.tolist()} is not reachable in {tau_star} steps")
    disp = target - p.x0
    box = p.U.box_bounds()
    if box is None:
        raise UnsupportedError("control recovery needs a box input set")
    lo, hi = box
    BRinv = np.linalg.inv(p.B_R)
    if objective == "feasibility":
        u = np.tile(BRinv @ disp / tau_star, (tau_star, 1))
    elif objective == "min_effort":
        u = _min_effort(p, tau_star, disp, lo, hi, R)
    else:
        raise ValidationError(f"unknown objective {objective!r}")
    return _repair(u, disp, p.B_R, lo, hi)


def _min_effort(p, tau, disp, lo, hi, R):
    m = 2 * tau
    R = np.eye(m) if R is None else np.asarray(R, dtype=float)
    if R.shape != (m, m):
        raise ValidationError(f"effort weight must be {m}x{m}")
    Cr = p.controls_matrix(tau)
    x0 = np.tile(np.linalg.inv(p.B_R) @ disp / tau, tau)
    res = minimize(
        lambda v: v @ R @ v,
        x0,
        jac=lambda v: (R + R.T) @ v,
        constraints=[{"type": "eq", "fun": lambda v: Cr @ v - disp, "jac": lambda v: Cr}],
        bounds=list(zip(np.tile(lo, tau), np.tile(hi, tau))),
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 500},
    )
    return res.x.reshape(tau, 2)


def _repair(u, disp, B_R, lo, hi, rounds=50):
    """Clip inputs into ``[lo, hi]`` and spread any displacement error over free steps."""
    u = np.clip(u, lo, hi)
    Binv = np.linalg.inv(B_R)
    for _ in range(rounds):
        miss = Binv @ (disp - B_R @ u.sum(axis=0))
        if np.max(np.abs(miss)) <= 1e-15:
            break
        for k in range(2):
            if miss[k] == 0:
                continue
            room = (hi[k] - u[:, k]) if miss[k] > 0 else (u[:, k] - lo[k])
            free = room > 0
            if not free.any():
                continue
            share = np.minimum(abs(miss[k]) / free.sum(), room) * np.sign(miss[k])
            u[free, k] += share[free]
        u = np.clip(u, lo, hi)
    return u


@dataclass(frozen=True)
class PursuitProblem:
    """Target dynamics and law, pursuer, and capture half-width."""

    system: LtiSystem
    law: DisturbanceLaw
    x0: np.ndarray
    pursuer: Pursuer
    half_width: float

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        if self.x0.size != self.system.n:
            raise ValidationError(f"target x0 must have length {self.system.n}")
        if not self.half_width > 0:
            raise ValidationError("capture half-width must be positive")


@dataclass(frozen=True)
class PlanRow:
    tau: int
    feasible: bool
    probability: float
    residual: float
    center: np.ndarray
    status: str
    iterations: int
    wall_ms: float


@dataclass(frozen=True)
class ScenarioPlan:
    rows: list
    tau_star: int | None
    center: np.ndarray | None
    probability: float
    controls: np.ndarray | None
    status: str
    extra: dict = field(default_factory=dict)

    def row(self, tau) -> PlanRow:
        return self.rows[tau - 1]


def solve_tau(problem: PursuitProblem, tau: int, q: QuadConfig = QuadConfig(),
              opt: OptConfig = OptConfig(), separable: bool | None = None) -> PlanRow:
    """Prune, then maximise the capture probability at one step."""
    t0 = time.perf_counter()
    sys, a = problem.system, problem.half_width
    reach = pursuer_reach_set(problem.pursuer, tau)
    lower, upper = _bounding_box(reach)
    fset = fsr_set(sys, problem.law, problem.x0, tau)
    if not feasible_region(fset, lower - a, upper + a):
        ms = (time.perf_counter() - t0) * 1e3
        return PlanRow(tau, False, 0.0, 0.0, 0.5 * (lower + upper), "pruned", 0, ms)
    f = fsrpd(sys, problem.law, problem.x0, tau)
    res = solve_prob_c(f, reach, a, q, opt, separable)
    ms = (time.perf_counter() - t0) * 1e3
    log.info("tau=%d prob=%.6g status=%s", tau, res.probability, res.status)
    return PlanRow(tau, True, res.probability, res.residual, res.center, res.status,
                   res.iterations, ms)


def solve_prob_b(problem: PursuitProblem, q: QuadConfig = QuadConfig(),
                 opt: OptConfig = OptConfig(), separable: bool | None = None,
                 objective: str = "feasibility") -> ScenarioPlan:
    """Best capture step over the horizon, its position and the inputs reaching it."""
    rows = [solve_tau(problem, tau, q, opt, separable) for tau in range(1, problem.system.T + 1)]
    return assemble_plan(problem, rows, objective)


def assemble_plan(problem: PursuitProblem, rows, objective="feasibility") -> ScenarioPlan:
    best = None
    for row in rows:
        if not row.feasible or row.status == "infeasible":
            continue
        # strict comparison keeps the earliest step on ties
        if best is None or row.probability > best.probability:
            best = row
    if best is None:
        return ScenarioPlan(rows, None, None, 0.0, None, "empty: no step can capture the target")
    controls = recover_controls(problem.pursuer, best.tau, best.center, objective)
    return ScenarioPlan(rows, best.tau, best.center, best.probability, controls, "ok")
