"""Truncated Fourier-domain quadrature.

Two integrals are supported, both over a truncated frequency box
``[-R_1, R_1] x ... x [-R_n, R_n]``:

* density recovery  ``psi(y) = (2 pi)^-n  int exp(-j a.y) Psi(a) da``
* inner products    ``int psi h = (2 pi)^-n  int Psi(g) H(g) dg``

where ``H`` is the Fourier transform (``exp(-j g.x)`` kernel) of a test function
``h``. Tensor rules are built per axis from composite Gauss-Legendre panels (or
a uniform trapezoid rule). Each result carries a residual estimate made of

* a refinement term  ``|I(fine) - I(coarse)|`` where the fine rule has twice as
  many panels per axis,
* a truncation term  ``max(|I(R) - I(R/2)|, |I(R) - I(3R/4)|)`` read off the
  fine grid (two sub-radii, so an oscillating tail cannot hide behind an
  unlucky phase), and
* the imaginary residue of an integral that is real by construction.

Panel widths obey an oscillation guard: the mean node spacing times the phase
extent of the integrand along that axis stays below ``pi/4``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import NonConvergenceError, UnsupportedError, ValidationError

log = logging.getLogger(__name__)

RULES = ("tensor_gauss_legendre", "tensor_trapezoid", "adaptive_nested")
MAX_TENSOR_DIM = 4


@dataclass(frozen=True)
class QuadConfig:
    """Settings for the truncated Fourier quadratures.

    ``radius`` fixes the per-axis truncation; when ``None`` it is estimated from
    the decay of the integrand. ``nodes`` is the minimum node count per axis;
    the oscillation guard and refinement may raise it, bounded by
    ``max_evals`` integrand evaluations in total. With ``strict`` set,
    non-convergence raises :class:`NonConvergenceError`; otherwise the
    unconverged result is returned with ``converged=False``.
    """

    radius: float | Sequence[float] | None = None
    nodes: int = 257
    rule: str = "tensor_gauss_legendre"
    tol: float = 1e-6
    max_evals: int = 40_000_000
    panel_order: int = 16
    envelope_tol: float = 1e-8
    radius_cap: float = 256.0
    spread_factor: float = 6.0
    strict: bool = True

    def __post_init__(self):
        if self.nodes < 8:
            raise ValidationError("nodes per axis must be at least 8")
        if self.tol <= 0:
            raise ValidationError("tolerance must be positive")
        if self.rule not in RULES:
            raise ValidationError(f"unknown rule {self.rule!r}; choose from {RULES}")
        if self.panel_order < 2:
            raise ValidationError("panel_order must be at least 2")
        if self.max_evals < 1:
            raise ValidationError("max_evals must be positive")

    def with_(self, **changes) -> "QuadConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class QuadResult:
    value: float
    residual: float
    evaluations: int
    converged: bool
    info: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class TruncationEstimate:
    radii: np.ndarray
    slow_decay: bool
    message: str = ""


@dataclass(frozen=True)
class AxisRule:
    """One-dimensional rule on ``[-R, R]`` plus weights of its sub-rules.

    ``sub_weights`` restrict the rule to ``[-R/2, R/2]`` and ``[-3R/4, 3R/4]``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    sub_weights: tuple
    radius: float
    panels: int


def axis_rule(radius: float, panels: int, rule: str, order: int) -> AxisRule:
    """Composite rule with ``panels`` panels (rounded up to a multiple of 8)."""
    panels = max(8, 8 * math.ceil(panels / 8))
    if rule == "tensor_trapezoid":
        m = panels * order
        nodes = np.linspace(-radius, radius, m + 1)
        h = nodes[1] - nodes[0]
        w = np.full(m + 1, h)
        w[[0, -1]] = h / 2
        subs = []
        for lo, hi in ((m // 4, 3 * m // 4), (m // 8, 7 * m // 8)):
            inner = np.zeros(m + 1)
            inner[lo:hi + 1] = h
            inner[[lo, hi]] = h / 2
            subs.append(inner)
        return AxisRule(nodes, w, tuple(subs), radius, panels)
    x, wx = _legendre(order)
    edges = np.linspace(-radius, radius, panels + 1)
    half = np.diff(edges)[:, None] / 2
    mid = ((edges[:-1] + edges[1:]) / 2)[:, None]
    nodes = (half * x + mid).ravel()
    w = (half * wx).ravel()
    subs = tuple(
        np.where(np.repeat(np.abs(mid.ravel()) < frac * radius, order), w, 0.0)
        for frac in (0.5, 0.75)
    )
    return AxisRule(nodes, w, subs, radius, panels)


_LEG_CACHE: dict = {}


def _legendre(order):
    if order not in _LEG_CACHE:
        _LEG_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _LEG_CACHE[order]


def guard_panels(radius: float, extent: float, q: QuadConfig) -> int:
    """Panels needed on ``[-R, R]`` so that spacing * extent <= pi/4."""
    per_panel = q.panel_order
    need_nodes = 2 * radius * max(extent, 0.0) / (math.pi / 4)
    return max(math.ceil(q.nodes / per_panel), math.ceil(need_nodes / per_panel), 1)


def tensor_points(rules: Sequence[AxisRule]) -> np.ndarray:
    grids = np.meshgrid(*[r.nodes for r in rules], indexing="ij")
    return np.stack(grids, axis=-1)


def contract(values: np.ndarray, weights: Sequence[np.ndarray]):
    """``sum values[i1..in] * w1[i1] * ... * wn[in]``."""
    out = values
    for w in reversed(weights):
        out = out @ w
    return out


def cf_moments(cf: Callable, dim: int, h: float = 1e-4):
    """Mean and standard deviation per axis from finite differences of ``log cf``.

    Uses ``log Psi(h e_i) ~ j h mu_i - h^2 sigma_i^2 / 2``.
    """
    eye = np.eye(dim)
    plus = np.log(cf(h * eye))
    minus = np.log(cf(-h * eye))
    mean = (plus.imag - minus.imag) / (2 * h)
    var = -(plus.real + minus.real) / h**2
    return mean, np.sqrt(np.clip(var, 0.0, None))


def _probe_directions(dim):
    dirs = [np.eye(dim)[i] * s for i in range(dim) for s in (1.0, -1.0)]
    if dim > 1:
        for signs in np.array(np.meshgrid(*[[1.0, -1.0]] * dim)).T.reshape(-1, dim):
            dirs.append(signs / math.sqrt(dim))
    return np.array(dirs)


def estimate_truncation(
    cf: Callable, envelope_tol: float, dim: int = 1, cap: float = 1e5, start: float = 1.0
) -> TruncationEstimate:
    """Per-axis radii beyond which ``|cf|`` stays below ``envelope_tol``.

    Probes rays along the axes and the diagonals. Along each ray the radius is
    doubled from ``start`` until the maximum of ``|cf|`` over ``[r, 2r]``
    (sampled) drops below the tolerance, then refined by bisection. A ray that
    reaches ``cap`` marks the estimate as slowly decaying.
    """
    if envelope_tol <= 0:
        raise ValidationError("envelope_tol must be positive")
    samples = np.linspace(1.0, 2.0, 33)

    def above(direction, r):
        pts = (r * samples)[:, None] * direction
        return np.max(np.abs(cf(pts))) >= envelope_tol

    radii = np.zeros(dim)
    slow = False
    for d in _probe_directions(dim):
        r = start
        while above(d, r) and r < cap:
            r *= 2.0
        if r >= cap and above(d, cap):
            slow = True
            r_hit = cap
        else:
            lo, hi = (r / 2.0, r) if r > start else (0.0, r)
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if above(d, mid):
                    lo = mid
                else:
                    hi = mid
            r_hit = hi
        radii = np.maximum(radii, r_hit * np.abs(d))
    radii = np.minimum(radii, cap)
    msg = ""
    if slow:
        msg = f"|cf| still above {envelope_tol:g} at radius cap {cap:g}; slow decay"
        log.info(msg)
    return TruncationEstimate(radii, slow, msg)


@dataclass
class SeparableFt:
    """Test-function transform ``H(g) = prod_i factors[i](g_i)``.

    ``center`` and ``halfwidth`` locate the support of the test function per
    axis; they feed the oscillation guard.
    """

    factors: Sequence[Callable]
    center: Sequence[float]
    halfwidth: Sequence[float]

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        out = np.ones(g.shape[:-1], dtype=complex)
        for i, f in enumerate(self.factors):
            out = out * f(g[..., i])
        return out


def _as_radii(radius, dim):
    r = np.asarray(radius, dtype=float).reshape(-1)
    if r.size == 1:
        r = np.full(dim, r[0])
    if r.size != dim or np.any(r <= 0):
        raise ValidationError(f"radius must be positive with {dim} entries")
    return r


def _start_radius(sd):
    top = float(np.max(sd))
    return 1.0 / top if top > 0 else 1.0


def _initial_radii(envelope, q: QuadConfig, n: int, sd):
    """Starting truncation radii and the slow-decay flag.

    A slowly decaying integrand starts from the radius where its envelope meets
    the target tolerance instead of the cap; residual-driven doubling extends it.
    """
    start = _start_radius(sd)
    cap = q.radius_cap * start
    est = estimate_truncation(envelope, q.envelope_tol, n, cap=cap, start=start)
    if not est.slow_decay:
        return est.radii, False
    est = estimate_truncation(envelope, max(q.tol, q.envelope_tol), n, cap=cap, start=start)
    return est.radii, True


def _infer_dim(cf, dim):
    if dim is not None:
        return int(dim)
    for n in range(1, MAX_TENSOR_DIM + 1):
        try:
            cf(np.zeros(n))
            return n
        except Exception:
            continue
    raise ValidationError("could not infer the dimension of the characteristic function")


def _run(evaluate, dim, radii, extents, q, slow):
    """Refinement driver shared by both integrals.

    ``evaluate(rules)`` returns the full integral and the sub-radius integrals.
    """
    if dim > MAX_TENSOR_DIM:
        raise UnsupportedError(f"tensor rules are limited to n <= {MAX_TENSOR_DIM}")
    radii = np.array(radii, dtype=float)
    scale_panels = np.ones(dim)
    evals = 0
    best = None
    adaptive = q.rule == "adaptive_nested" or slow
    base_rule = "tensor_gauss_legendre" if q.rule == "adaptive_nested" else q.rule
    while True:
        coarse_p = [
            int(math.ceil(guard_panels(radii[i], extents[i], q) * scale_panels[i]))
            for i in range(dim)
        ]
        coarse = [axis_rule(radii[i], coarse_p[i], base_rule, q.panel_order) for i in range(dim)]
        fine = [axis_rule(radii[i], 2 * coarse[i].panels, base_rule, q.panel_order) for i in range(dim)]
        cost = int(np.prod([r.nodes.size for r in coarse]) + np.prod([r.nodes.size for r in fine]))
        if evals + cost > q.max_evals and best is not None:
            break
        if evals + cost > q.max_evals:
            raise UnsupportedError(
                f"a single quadrature pass needs {cost} evaluations, above max_evals={q.max_evals}"
            )
        i_coarse, _ = evaluate(coarse)
        i_fine, i_subs = evaluate(fine)
        evals += cost
        refine = abs(i_fine - i_coarse)
        trunc = max(abs(i_fine - i) for i in i_subs)
        imag = abs(complex(i_fine).imag)
        resid = refine + trunc + imag
        best = (i_fine, resid, refine, trunc, imag, radii.copy(), [r.nodes.size for r in fine])
        log.debug("quad pass R=%s nodes=%s refine=%.3g trunc=%.3g imag=%.3g",
                  radii, best[6], refine, trunc, imag)
        if resid <= q.tol and imag <= 10 * q.tol:
            break
        if trunc > refine and (adaptive or q.radius is None):
            radii = radii * 2.0
        else:
            scale_panels = scale_panels * 2.0
    value, resid, refine, trunc, imag, radii, nodes = best
    converged = bool(resid <= q.tol and imag <= 10 * q.tol)
    info = {"radii": radii, "nodes": nodes, "refine": refine, "truncation": trunc, "imag": imag}
    return complex(value).real, resid, evals, converged, info


def _finish(value, resid, evals, converged, info, lower, upper, q, what):
    clamped = min(max(value, lower), upper)
    resid += abs(clamped - value)
    info["unclamped"] = value
    converged = converged and resid <= q.tol
    result = QuadResult(clamped, resid, evals, converged, info)
    if not converged and q.strict:
        raise NonConvergenceError(
            f"{what} did not reach tol={q.tol:g}; residual {resid:.3g} after {evals} evaluations",
            result,
        )
    return result


def inverse_cf(cf: Callable, y, q: QuadConfig = QuadConfig(), dim: int | None = None) -> QuadResult:
    """Density at ``y`` recovered from the characteristic function ``cf``.

    Returns ``(2 pi)^-n int_[-R,R]^n exp(-j a.y) cf(a) da``, real part, clamped at
    zero from below (the clamp magnitude is added to the residual).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = y.size if dim is None else int(dim)
    if y.size != n:
        raise ValidationError(f"point has {y.size} coordinates, expected {n}")
    if n > MAX_TENSOR_DIM:
        raise UnsupportedError(f"tensor rules are limited to n <= {MAX_TENSOR_DIM}")
    mean, sd = cf_moments(cf, n)
    extents = np.abs(y - mean) + q.spread_factor * sd
    slow = False
    if q.radius is None:
        radii, slow = _initial_radii(cf, q, n, sd)
    else:
        radii = _as_radii(q.radius, n)

    norm = (2 * math.pi) ** (-n)

    def evaluate(rules):
        pts = tensor_points(rules)
        vals = np.exp(-1j * (pts @ y)) * cf(pts)
        full = contract(vals, [r.weights for r in rules])
        subs = [norm * contract(vals, [r.sub_weights[k] for r in rules]) for k in range(2)]
        return norm * full, subs

    value, resid, evals, converged, info = _run(evaluate, n, radii, extents, q, slow)
    info["slow_decay"] = slow
    return _finish(value, resid, evals, converged, info, 0.0, np.inf, q, "inverse_cf")


class ParsevalOperator:
    """Parseval functional of one CF against a family of separable test transforms.

    ``family(center)`` returns the :class:`SeparableFt` of the test function
    located at ``center``. Centers are expected inside ``region = (lower,
    upper)``, which sizes the oscillation guard. The CF is tabulated once on the
    coarse and fine tensor grids and reused for every center, so repeated calls
    cost only a contraction; the grids are refined (and the cache rebuilt) when
    a call misses the tolerance. ``refinements`` counts those rebuilds.
    """

    def __init__(self, cf: Callable, family: Callable, region, q: QuadConfig = QuadConfig(),
                 dim: int | None = None):
        n = _infer_dim(cf, dim)
        if n > MAX_TENSOR_DIM:
            raise UnsupportedError(f"tensor rules are limited to n <= {MAX_TENSOR_DIM}")
        self.cf = cf
        self.family = family
        self.q = q
        self.dim = n
        lower, upper = (np.broadcast_to(np.asarray(b, dtype=float), (n,)) for b in region)
        mean, sd = cf_moments(cf, n)
        probe = family(0.5 * (lower + upper))
        reach = np.maximum(np.abs(mean - lower), np.abs(mean - upper))
        self.extents = reach + np.asarray(probe.halfwidth, dtype=float) + q.spread_factor * sd
        self.slow = False
        if q.radius is None:
            self.radii, self.slow = _initial_radii(lambda g: cf(g) * probe(g), q, n, sd)
        else:
            self.radii = _as_radii(q.radius, n)
        self.adaptive = q.rule == "adaptive_nested" or self.slow or q.radius is None
        self.base_rule = "tensor_gauss_legendre" if q.rule == "adaptive_nested" else q.rule
        self.scale_panels = np.ones(n)
        self.evaluations = 0
        self.refinements = 0
        self._cache = None

    def _build(self):
        n, q = self.dim, self.q
        coarse_p = [
            int(math.ceil(guard_panels(self.radii[i], self.extents[i], q) * self.scale_panels[i]))
            for i in range(n)
        ]
        coarse = [axis_rule(self.radii[i], coarse_p[i], self.base_rule, q.panel_order) for i in range(n)]
        fine = [axis_rule(self.radii[i], 2 * coarse[i].panels, self.base_rule, q.panel_order)
                for i in range(n)]
        cost = int(np.prod([r.nodes.size for r in coarse]) + np.prod([r.nodes.size for r in fine]))
        if self.evaluations + cost > q.max_evals:
            return False
        self._cache = (coarse, self.cf(tensor_points(coarse)), fine, self.cf(tensor_points(fine)))
        self.evaluations += cost
        return True

    def _contract(self, center):
        ft = self.family(center)
        coarse, v_coarse, fine, v_fine = self._cache
        norm = (2 * math.pi) ** (-self.dim)
        hc = [f(r.nodes) for r, f in zip(coarse, ft.factors)]
        hf = [f(r.nodes) for r, f in zip(fine, ft.factors)]
        i_coarse = norm * contract(v_coarse, [r.weights * h for r, h in zip(coarse, hc)])
        i_fine = norm * contract(v_fine, [r.weights * h for r, h in zip(fine, hf)])
        refine = abs(i_fine - i_coarse)
        trunc = max(
            abs(i_fine - norm * contract(v_fine, [r.sub_weights[k] * h for r, h in zip(fine, hf)]))
            for k in range(2)
        )
        imag = abs(complex(i_fine).imag)
        return i_fine, refine, trunc, imag

    def raw(self, center):
        """Unclamped real value, residual and diagnostics at ``center`` without refinement."""
        if self._cache is None and not self._build():
            raise UnsupportedError(
                f"a single quadrature pass exceeds max_evals={self.q.max_evals}"
            )
        value, refine, trunc, imag = self._contract(center)
        return complex(value).real, refine + trunc + imag, refine, trunc, imag

    def __call__(self, center, lower: float = 0.0, upper: float = 1.0) -> QuadResult:
        q = self.q
        while True:
            value, resid, refine, trunc, imag = self.raw(center)
            ok = resid <= q.tol and imag <= 10 * q.tol
            if ok:
                break
            if trunc > refine and self.adaptive:
                self.radii = self.radii * 2.0
            else:
                self.scale_panels = self.scale_panels * 2.0
            previous = self._cache
            if not self._build():
                self._cache = previous
                # undo the state change so later calls keep using the last grid
                if trunc > refine and self.adaptive:
                    self.radii = self.radii / 2.0
                else:
                    self.scale_panels = self.scale_panels / 2.0
                break
            self.refinements += 1
        coarse, _, fine, _ = self._cache
        info = {
            "radii": self.radii.copy(), "nodes": [r.nodes.size for r in fine],
            "refine": refine, "truncation": trunc, "imag": imag, "slow_decay": self.slow,
        }
        converged = bool(ok)
        return _finish(value, resid, self.evaluations, converged, info, lower, upper, q,
                       "parseval_functional")


def parseval_functional(
    cf: Callable,
    test_ft: Callable,
    q: QuadConfig = QuadConfig(),
    dim: int | None = None,
    extent=None,
) -> QuadResult:
    """``(2 pi)^-n int cf(g) H(g) dg`` over the truncated box, clamped to ``[0, 1]``.

    ``extent`` bounds the distance between points of the density's bulk and
    points of the test function's support per axis; it sets the oscillation
    guard. For a :class:`SeparableFt` it is derived automatically.
    """
    n = _infer_dim(cf, dim)
    if n > MAX_TENSOR_DIM:
        raise UnsupportedError(f"tensor rules are limited to n <= {MAX_TENSOR_DIM}")
    if isinstance(test_ft, SeparableFt) and extent is None:
        center = np.broadcast_to(np.asarray(test_ft.center, dtype=float), (n,))
        return ParsevalOperator(cf, lambda c: test_ft, (center, center), q, n)(center)
    mean, sd = cf_moments(cf, n)
    if extent is None:
        extents = np.abs(mean) + q.spread_factor * sd
    else:
        extents = np.broadcast_to(np.asarray(extent, dtype=float), (n,))

    slow = False
    if q.radius is None:
        radii, slow = _initial_radii(lambda g: cf(g) * test_ft(g), q, n, sd)
    else:
        radii = _as_radii(q.radius, n)

    norm = (2 * math.pi) ** (-n)

    def evaluate(rules):
        pts = tensor_points(rules)
        vals = cf(pts) * test_ft(pts)
        full = contract(vals, [r.weights for r in rules])
        subs = [norm * contract(vals, [r.sub_weights[k] for r in rules]) for k in range(2)]
        return norm * full, subs

    value, resid, evals, converged, info = _run(evaluate, n, radii, extents, q, slow)
    info["slow_decay"] = slow
    return _finish(value, resid, evals, converged, info, 0.0, 1.0, q, "parseval_functional")


def warn_if_slow(est: TruncationEstimate):
    if est.slow_decay:
        warnings.warn(est.message, RuntimeWarning, stacklevel=2)
