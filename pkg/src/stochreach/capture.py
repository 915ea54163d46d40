"""Capture boxes and the probability that the target lies inside one.

Two evaluation routes:

* Gaussian FSRPDs integrate the closed-form position density over the box.
  The inner axis is done in closed form through the conditional normal law,
  the outer axis by adaptive Gauss-Kronrod quadrature.
* CF-backed FSRPDs use the Parseval identity ``P = (2 pi)^-2 int Psi H``
  with ``H`` the Fourier transform of the box indicator. When the two position
  coordinates are independent the integral factorises into two 1-D integrals.

:class:`CaptureEvaluator` keeps the tabulated CF between calls, so scanning
many box centers for one step ``tau`` (as the planner does) is cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .errors import NonConvergenceError, ShapeError, UnsupportedError, ValidationError
from .fsr import Fsrpd, FsrSet, prune_by_support
from .polytope import Polytope
from .quad import ParsevalOperator, QuadConfig, QuadResult, SeparableFt


@dataclass(frozen=True)
class CaptureBox:
    """Axis-aligned square of half-width ``half_width`` around ``center``."""

    center: np.ndarray
    half_width: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if c.size != 2:
            raise ShapeError(f"capture box center must be planar, got {c.size} coordinates")
        if not self.half_width > 0:
            raise ValidationError("capture half-width must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def lower(self):
        return self.center - self.half_width

    @property
    def upper(self):
        return self.center + self.half_width

    def polytope(self) -> Polytope:
        return Polytope.from_box(self.lower, self.upper)

    def contains(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.all((points >= self.lower) & (points <= self.upper), axis=-1)


def box_axis_factor(center: float, half_width: float):
    """``g -> int_{c-a}^{c+a} exp(-j g x) dx = 2 sin(a g) / g * exp(-j c g)``."""

    def factor(g):
        g = np.asarray(g, dtype=float)
        ag = half_width * g
        small = np.abs(ag) < 1e-4
        safe = np.where(small, 1.0, g)
        # series 2a (1 - (ag)^2/6 + (ag)^4/120) avoids 0/0 near the origin
        series = 2 * half_width * (1 - ag**2 / 6 + ag**4 / 120)
        return np.where(small, series, 2 * np.sin(ag) / safe) * np.exp(-1j * center * g)

    return factor


def box_ft(center, half_width) -> SeparableFt:
    center = np.asarray(center, dtype=float).reshape(-1)
    factors = [box_axis_factor(c, half_width) for c in center]
    return SeparableFt(factors, center, np.full(center.size, half_width))


def box_indicator_ft(box: CaptureBox, gamma) -> np.ndarray:
    """Fourier transform ``4 a^2 exp(-j c.g) sin(a g1) sin(a g2) / (a^2 g1 g2)`` of the box."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape[-1] != 2:
        raise ShapeError("frequency vectors must be planar")
    return box_ft(box.center, box.half_width)(gamma)


def _phi_diff(lo, hi):
    """``Phi(hi) - Phi(lo)`` evaluated on the tail that avoids cancellation."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    upper_tail = lo > 0
    return np.where(upper_tail, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def gaussian_box_mass(mean, cov, lower, upper, rtol: float = 1e-10):
    """``P{X in [lower, upper]}`` for a bivariate normal, with an error estimate.

    Handles singular covariances (mass on a line or at a point).
    """
    m = np.asarray(mean, dtype=float).reshape(2)
    S = np.array(cov, dtype=float).reshape(2, 2)
    lo = np.asarray(lower, dtype=float).reshape(2)
    hi = np.asarray(upper, dtype=float).reshape(2)
    scale = max(float(np.max(np.abs(np.diag(S)))), 1e-300)
    tiny = 1e-12 * scale
    s11, s22, s12 = S[0, 0], S[1, 1], S[0, 1]
    if s11 <= tiny and s22 <= tiny:
        return float(np.all((m >= lo) & (m <= hi))), 0.0
    if s11 <= tiny:
        # swap so that the first axis carries the variance
        m, lo, hi = m[::-1], lo[::-1], hi[::-1]
        s11, s22 = s22, s11
    sd1 = math.sqrt(s11)
    slope = s12 / s11
    cvar = s22 - s12**2 / s11
    if cvar <= tiny:
        # x2 = m2 + slope (x1 - m1) exactly; intersect that line with the box in x1
        a, b = lo[0], hi[0]
        if abs(slope) > 0:
            t1 = m[0] + (lo[1] - m[1]) / slope
            t2 = m[0] + (hi[1] - m[1]) / slope
            a, b = max(a, min(t1, t2)), min(b, max(t1, t2))
        elif not lo[1] <= m[1] <= hi[1]:
            return 0.0, 0.0
        if a >= b:
            return 0.0, 0.0
        return float(_phi_diff((a - m[0]) / sd1, (b - m[0]) / sd1)), 1e-16
    csd = math.sqrt(cvar)

    def inner(x1):
        cm = m[1] + slope * (x1 - m[0])
        z = (x1 - m[0]) / sd1
        dens = math.exp(-0.5 * z * z) / (sd1 * math.sqrt(2 * math.pi))
        return dens * float(_phi_diff((lo[1] - cm) / csd, (hi[1] - cm) / csd))

    # restrict the outer axis to +-40 sd around the mean; beyond that the mass is < 1e-300
    a = max(lo[0], m[0] - 40 * sd1)
    b = min(hi[0], m[0] + 40 * sd1)
    if a >= b:
        return 0.0, 0.0
    points = [p for p in (m[0],) if a < p < b]
    value, err = integrate.quad(inner, a, b, epsabs=0.0, epsrel=rtol, limit=200, points=points or None)
    return float(min(max(value, 0.0), 1.0)), float(err)


class CaptureEvaluator:
    """Capture probability of one FSRPD as a function of the box center.

    ``region`` (lower, upper) bounds the centers that will be requested; it
    sizes the oscillation guard on the Fourier route. ``separable`` controls the
    factorised route for independent position coordinates (``None`` means use
    it when applicable).
    """

    def __init__(self, f: Fsrpd, half_width: float, region=None, q: QuadConfig = QuadConfig(),
                 separable: bool | None = None):
        if not half_width > 0:
            raise ValidationError("capture half-width must be positive")
        self.pos = f.position_marginal()
        if self.pos.dim != 2:
            raise ShapeError("capture needs a planar position marginal")
        self.a = float(half_width)
        self.q = q
        self.kind = self.pos.kind
        if region is None:
            region = (np.full(2, -1.0), np.full(2, 1.0))
        lower, upper = (np.asarray(r, dtype=float).reshape(2) for r in region)
        self.region = (lower, upper)
        self._ops = None
        self.separable = False
        if self.kind == "cf":
            if not self.pos.square_integrable:
                raise UnsupportedError(
                    "position marginal is not known to be square integrable; "
                    "the Fourier route does not apply"
                )
            use = self.pos.separable if separable is None else bool(separable)
            if use and not self.pos.separable:
                raise UnsupportedError("position coordinates are not independent")
            self.separable = use

    @property
    def refinements(self) -> int:
        if not self._ops:
            return 0
        return sum(op.refinements for op in self._ops)

    def _operators(self):
        if self._ops is not None:
            return self._ops
        lower, upper = self.region
        q = self.q
        a = self.a
        if self.separable:
            # two 1-D integrals; each gets half the error budget
            q1 = q.with_(tol=q.tol / 2, strict=False)
            self._ops = [
                ParsevalOperator(
                    self._axis_cf(i),
                    lambda c, i=i: box_ft(np.atleast_1d(c), a),
                    (lower[i:i + 1], upper[i:i + 1]),
                    q1,
                    dim=1,
                )
                for i in range(2)
            ]
        else:
            self._ops = [
                ParsevalOperator(self.pos.cf, lambda c: box_ft(c, a), (lower, upper),
                                 q.with_(strict=False), dim=2)
            ]
        return self._ops

    def _axis_cf(self, i):
        cf = self.pos.cf

        def axis(g):
            g = np.asarray(g, dtype=float)
            full = np.zeros(g.shape[:-1] + (2,))
            full[..., i] = g[..., 0]
            return cf(full)

        return axis

    def __call__(self, center) -> QuadResult:
        center = np.asarray(center, dtype=float).reshape(2)
        if self.kind == "gaussian":
            value, err = gaussian_box_mass(
                self.pos.mean, self.pos.cov, center - self.a, center + self.a
            )
            return QuadResult(value, err, 1, True, {"route": "gaussian"})
        ops = self._operators()
        if self.separable:
            r1 = ops[0](center[:1])
            r2 = ops[1](center[1:])
            value = r1.value * r2.value
            resid = r1.residual * (r2.value + r2.residual) + r2.residual * r1.value
            converged = r1.converged and r2.converged and resid <= self.q.tol
            info = {"route": "parseval_separable", "axes": (r1.info, r2.info)}
            result = QuadResult(value, resid, r1.evaluations + r2.evaluations, converged, info)
        else:
            result = ops[0](center)
            result.info["route"] = "parseval"
        if not result.converged and self.q.strict:
            raise NonConvergenceError(
                f"capture probability did not reach tol={self.q.tol:g}; "
                f"residual {result.residual:.3g}",
                result,
            )
        return result


def capture_probability(f: Fsrpd, box: CaptureBox, q: QuadConfig = QuadConfig(),
                        separable: bool | None = None) -> QuadResult:
    """``P{position of x[tau] in box}`` with a residual estimate."""
    region = (box.center, box.center)
    return CaptureEvaluator(f, box.half_width, region, q, separable)(box.center)


def lift_to_state(lower, upper, dim: int, positions) -> Polytope:
    """``{x in R^dim : lower <= x[positions] <= upper}``."""
    rows, offs = [], []
    for k, i in enumerate(positions):
        e = np.zeros(dim)
        e[i] = 1.0
        rows += [e, -e]
        offs += [upper[k], -lower[k]]
    return Polytope(np.array(rows), np.array(offs))


def feasible_region(f_set: FsrSet, lower, upper) -> bool:
    """False when no position in the box ``[lower, upper]`` is reachable."""
    S = lift_to_state(np.asarray(lower, float), np.asarray(upper, float), f_set.dim, f_set.positions)
    return not prune_by_support(f_set, S)


def feasible(f_set: FsrSet, box: CaptureBox) -> bool:
    """False iff the box provably has zero capture probability."""
    return feasible_region(f_set, box.lower, box.upper)
