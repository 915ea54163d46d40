"""Forward stochastic reachability of ``x[t+1] = A x[t] + B w[t]``.

The state at step ``tau`` is ``A^tau x0 + C_tau W``. Its characteristic function
is therefore ``exp(j a.A^tau x0) * prod_t Psi_w((C_tau^T a)_t)``; for Gaussian
disturbances this collapses to a closed-form normal law. Supports of the state
are over-approximated symbolically (whole space, shifted cone, or box) and used
to prune sets that the state reaches with probability zero.

An independent grid-based route, repeated linear-map transform plus
convolution with the density of ``B w``, is kept as a cross-check oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.optimize import linprog
from scipy.signal import fftconvolve

from .errors import (
    AccuracyError,
    NonConvergenceError,
    ShapeError,
    UnsupportedError,
    ValidationError,
)
from .linsys import LtiSystem, concat_matrix
from .polytope import Polytope
from .quad import QuadConfig, QuadResult, inverse_cf
from .randvec import ConcatLaw, DisturbanceLaw, GaussianLaw, marginal_cf


class Fsrpd:
    """Forward stochastic reach probability density at one step ``tau``.

    ``positions`` indexes the planar-position coordinates within ``dim``.
    """

    kind: str
    tau: int
    x0: np.ndarray
    dim: int
    positions: tuple
    log_concave: bool
    square_integrable: bool

    def cf(self, alpha):
        raise NotImplementedError

    def marginal(self, keep) -> "Fsrpd":
        raise NotImplementedError

    def position_marginal(self) -> "Fsrpd":
        if tuple(self.positions) == tuple(range(self.dim)):
            return self
        return self.marginal(self.positions)


class GaussianFsrpd(Fsrpd):
    kind = "gaussian"

    def __init__(self, mean, cov, tau, x0, positions=(0, 1)):
        self.law = GaussianLaw(mean, cov)
        self.mean = self.law.mean()
        self.cov = self.law.covariance()
        self.tau = int(tau)
        self.x0 = np.asarray(x0, dtype=float)
        self.dim = self.mean.size
        self.positions = tuple(positions)
        self.log_concave = True
        self.square_integrable = not self.law.degenerate
        self.degenerate = self.law.degenerate
        self.rank = self.law.rank
        self.separable = self.law.independent_coords

    def cf(self, alpha):
        return self.law.cf(alpha)

    def pdf(self, y):
        return self.law.pdf(y)

    def marginal(self, keep):
        keep = list(keep)
        pos = tuple(keep.index(i) for i in self.positions if i in keep)
        return GaussianFsrpd(self.mean[keep], self.cov[np.ix_(keep, keep)], self.tau, self.x0, pos)

    def __repr__(self):
        return f"GaussianFsrpd(tau={self.tau}, mean={self.mean.tolist()})"


class CfFsrpd(Fsrpd):
    """FSRPD known through its characteristic function only."""

    kind = "cf"

    def __init__(self, cf, dim, tau, x0, positions, log_concave, square_integrable,
                 mixing=None, independent=False, law_square_integrable=None):
        self._cf = cf
        # square integrability of the disturbance law itself; marginals recheck the rank
        self.law_square_integrable = (
            square_integrable if law_square_integrable is None else bool(law_square_integrable)
        )
        self.independent = bool(independent)
        self.dim = int(dim)
        self.tau = int(tau)
        self.x0 = np.asarray(x0, dtype=float)
        self.positions = tuple(positions)
        self.log_concave = bool(log_concave)
        self.square_integrable = bool(square_integrable)
        self.mixing = mixing

    def cf(self, alpha):
        return self._cf(alpha)

    @property
    def separable(self) -> bool:
        """True when the coordinates are independent.

        That holds when the stacked disturbance has independent coordinates and
        none of them feeds two state coordinates.
        """
        if self.mixing is None or not self.independent:
            return False
        return bool(np.all(np.count_nonzero(self.mixing, axis=0) <= 1))

    def marginal(self, keep):
        keep = [int(i) for i in keep]
        n = self.dim
        mixing = None if self.mixing is None else self.mixing[keep]
        full_rank = mixing is not None and np.linalg.matrix_rank(mixing) == len(keep)
        pos = tuple(keep.index(i) for i in self.positions if i in keep)
        return CfFsrpd(
            lambda g: marginal_cf(self._cf, keep, g, n),
            len(keep),
            self.tau,
            self.x0,
            pos,
            self.log_concave,
            self.law_square_integrable and full_rank,
            mixing,
            self.independent,
            self.law_square_integrable,
        )

    def __repr__(self):
        return f"CfFsrpd(tau={self.tau}, dim={self.dim})"


def _check_x0(sys, x0):
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != sys.n:
        raise ShapeError(f"x0 must have length {sys.n}, got {x0.size}")
    return x0


def state_cf(sys: LtiSystem, law: DisturbanceLaw, x0, tau: int) -> CfFsrpd:
    """CF-backed FSRPD: ``exp(j a.A^tau x0) * Psi_W(C_tau^T a)``."""
    tau = sys.check_step(tau)
    x0 = _check_x0(sys, x0)
    if law.dim != sys.p:
        raise ShapeError(f"law has dimension {law.dim}, system expects {sys.p}")
    C = concat_matrix(sys, tau)
    drift = sys.power(tau) @ x0
    stacked = ConcatLaw(law, tau)

    def cf(alpha):
        alpha = np.asarray(alpha, dtype=float)
        return np.exp(1j * (alpha @ drift)) * stacked.cf(alpha @ C)

    full_rank = np.linalg.matrix_rank(C) == sys.n
    return CfFsrpd(
        cf, sys.n, tau, x0, sys.position_indices,
        law.log_concave, law.square_integrable and full_rank, mixing=C,
        independent=law.independent_coords, law_square_integrable=law.square_integrable,
    )


def gaussian_fsrpd(sys: LtiSystem, mu_w, Sigma_w, x0, tau: int) -> GaussianFsrpd:
    """Closed-form ``N(A^tau x0 + C (1 (x) mu_w), C (I (x) Sigma_w) C^T)``."""
    tau = sys.check_step(tau)
    x0 = _check_x0(sys, x0)
    law = GaussianLaw(mu_w, Sigma_w)
    if law.dim != sys.p:
        raise ShapeError(f"disturbance has dimension {law.dim}, system expects {sys.p}")
    C = concat_matrix(sys, tau)
    mean = sys.power(tau) @ x0 + C @ np.tile(law.mean(), tau)
    cov = C @ np.kron(np.eye(tau), law.covariance()) @ C.T
    return GaussianFsrpd(mean, 0.5 * (cov + cov.T), tau, x0, sys.position_indices)


def fsrpd(sys: LtiSystem, law: DisturbanceLaw, x0, tau: int) -> Fsrpd:
    """Closed form for Gaussian laws, CF-backed otherwise."""
    if isinstance(law, GaussianLaw):
        return gaussian_fsrpd(sys, law.mean(), law.covariance(), x0, tau)
    return state_cf(sys, law, x0, tau)


def density_at(f: Fsrpd, y, q: QuadConfig = QuadConfig()) -> float:
    """Value of the FSRPD at ``y``.

    Gaussian kinds evaluate the closed form (on the support subspace when
    degenerate, 0 off it). CF-backed kinds invert the characteristic function.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != f.dim:
        raise ShapeError(f"point has {y.size} coordinates, expected {f.dim}")
    if f.kind == "gaussian":
        return float(f.pdf(y))
    return density_result(f, y, q).value


def density_result(f: Fsrpd, y, q: QuadConfig = QuadConfig()) -> QuadResult:
    """Like :func:`density_at` for CF-backed kinds, keeping the quadrature residual."""
    if f.kind == "gaussian":
        return QuadResult(float(f.pdf(y)), 0.0, 1, True)
    if not f.square_integrable:
        raise UnsupportedError(
            "FSRPD is not known to be square integrable (degenerate or Dirac factors); "
            "use a marginal over coordinates with full-rank mixing"
        )
    y = np.asarray(y, dtype=float).reshape(-1)
    if getattr(f, "separable", False) and f.dim > 1:
        # independent coordinates: product of 1-D inversions, each with a share of the budget
        axes = [_axis_cf(f.cf, i, f.dim) for i in range(f.dim)]
        scale = np.ones(f.dim)
        for _ in range(2):
            parts = [
                inverse_cf(axes[i], y[i:i + 1], q.with_(tol=q.tol / (f.dim * scale[i]), strict=False), dim=1)
                for i in range(f.dim)
            ]
            values = np.array([r.value for r in parts])
            resid = 0.0
            for i, r in enumerate(parts):
                others = np.prod([v.value + v.residual for j, v in enumerate(parts) if j != i])
                resid += r.residual * others
                # factors above one amplify the other axes' errors; tighten those axes on a retry
                scale[i] = max(1.0, others)
            if resid <= q.tol:
                break
        converged = all(r.converged for r in parts) and resid <= q.tol
        result = QuadResult(float(np.prod(values)), float(resid),
                            sum(r.evaluations for r in parts), converged,
                            {"route": "separable", "axes": [r.info for r in parts]})
        if not converged and q.strict:
            raise NonConvergenceError(
                f"density inversion did not reach tol={q.tol:g}; residual {resid:.3g}", result
            )
        return result
    return inverse_cf(f.cf, y, q, dim=f.dim)


def _axis_cf(cf, i, dim):
    def axis(g):
        g = np.asarray(g, dtype=float)
        full = np.zeros(g.shape[:-1] + (dim,))
        full[..., i] = g[..., 0]
        return cf(full)

    return axis


@dataclass(frozen=True)
class FsrSet:
    """Convex over-approximation of the support of ``x[tau]``.

    ``kind`` is ``whole_space``, ``cone`` (``offset + generators @ z`` for
    ``z >= 0``) or ``polytope``.
    """

    tau: int
    kind: str
    dim: int
    offset: np.ndarray | None = None
    generators: np.ndarray | None = None
    polytope: Polytope | None = None
    positions: tuple = field(default=(0, 1))

    @property
    def is_convex(self) -> bool:
        return self.kind in ("whole_space", "cone", "polytope")

    def contains(self, x, tol=1e-9) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.kind == "whole_space":
            return True
        if self.kind == "polytope":
            return self.polytope.contains(x, tol)
        G = self.generators
        res = linprog(
            np.zeros(G.shape[1]),
            A_eq=G, b_eq=x - self.offset,
            bounds=[(0, None)] * G.shape[1],
        )
        if res.status == 0:
            return True
        # equality LP may report infeasible on rounding; retry with a slack band
        res = linprog(
            np.zeros(G.shape[1]),
            A_ub=np.vstack([G, -G]),
            b_ub=np.concatenate([x - self.offset + tol, -(x - self.offset) + tol]),
            bounds=[(0, None)] * G.shape[1],
        )
        return res.status == 0


def fsr_set(sys: LtiSystem, law: DisturbanceLaw, x0, tau: int) -> FsrSet:
    """Over-approximate the support of ``x[tau]`` from the disturbance support class."""
    tau = sys.check_step(tau)
    x0 = _check_x0(sys, x0)
    C = concat_matrix(sys, tau)
    drift = sys.power(tau) @ x0
    n = sys.n
    pos = sys.position_indices
    kind = law.support.kind
    if not np.any(C):
        return FsrSet(tau, "polytope", n, polytope=Polytope.from_point(drift), positions=pos)
    if kind == "point":
        point = drift + C @ np.tile(law.support.lower, tau)
        return FsrSet(tau, "polytope", n, polytope=Polytope.from_point(point), positions=pos)
    if kind == "all_of_Rp":
        if np.linalg.matrix_rank(C) == n:
            return FsrSet(tau, "whole_space", n, positions=pos)
        # the support is the affine range of C: a cone generated by +-columns
        return FsrSet(tau, "cone", n, offset=drift, generators=np.hstack([C, -C]), positions=pos)
    if kind == "nonneg_orthant":
        shift = drift + C @ np.tile(law.support.lower, tau)
        if tau == 1:
            return FsrSet(tau, "cone", n, offset=shift, generators=sys.B.copy(), positions=pos)
        if np.linalg.matrix_rank(C) == n and np.all(C >= 0):
            return FsrSet(tau, "cone", n, offset=shift, generators=np.eye(n), positions=pos)
        return FsrSet(tau, "cone", n, offset=shift, generators=C, positions=pos)
    if kind == "box":
        lo = np.tile(law.support.lower, tau)
        hi = np.tile(law.support.upper, tau)
        center = drift + C @ ((lo + hi) / 2)
        radius = np.abs(C) @ ((hi - lo) / 2)
        return FsrSet(
            tau, "polytope", n,
            polytope=Polytope.from_box(center - radius, center + radius), positions=pos,
        )
    raise UnsupportedError(f"unsupported disturbance support {kind!r}")


def prune_by_support(f: FsrSet, S: Polytope) -> bool:
    """True when ``S`` misses the FSR set, so ``P{x[tau] in S} = 0``."""
    if S.dim != f.dim:
        raise ShapeError(f"set lives in R^{S.dim}, FSR set in R^{f.dim}")
    if f.kind == "whole_space":
        return False
    if f.kind == "polytope":
        return not f.polytope.intersects(S)
    G = f.generators
    res = linprog(
        np.zeros(G.shape[1]),
        A_ub=S.H @ G,
        b_ub=S.k - S.H @ f.offset,
        bounds=[(0, None)] * G.shape[1],
    )
    return res.status == 2


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid with ``num[i]`` points from ``lower[i]`` to ``upper[i]``."""

    lower: np.ndarray
    upper: np.ndarray
    num: tuple

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        num = tuple(int(k) for k in np.broadcast_to(self.num, lower.shape))
        if lower.shape != upper.shape or np.any(upper <= lower) or min(num) < 2:
            raise ValidationError("grid needs lower < upper and at least 2 points per axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "num", num)

    @property
    def dim(self):
        return self.lower.size

    @property
    def axes(self):
        return [np.linspace(a, b, k) for a, b, k in zip(self.lower, self.upper, self.num)]

    @property
    def spacing(self):
        return (self.upper - self.lower) / (np.asarray(self.num) - 1)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def points(self):
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class IterativeResult:
    grid: GridSpec
    density: np.ndarray
    masses: tuple


def _bw_density(sys: LtiSystem, law: DisturbanceLaw):
    """Density of ``B w`` as a callable on ``(..., n)`` points."""
    if isinstance(law, GaussianLaw):
        B = sys.B
        pushed = GaussianLaw(B @ law.mean(), B @ law.covariance() @ B.T)
        if not pushed.degenerate:
            return pushed.pdf, pushed.mean(), np.sqrt(np.diag(pushed.covariance()))
    if sys.B.shape[0] != sys.B.shape[1] or abs(np.linalg.det(sys.B)) < 1e-14:
        raise UnsupportedError("the grid oracle needs B w to have a density on R^n")
    Binv = np.linalg.inv(sys.B)
    jac = abs(np.linalg.det(sys.B))
    mean = sys.B @ law.mean()
    sd = np.sqrt(np.diag(sys.B @ law.covariance() @ sys.B.T))
    return (lambda z: law.pdf(z @ Binv.T) / jac), mean, sd


def default_grid(sys, law, x0, tau, num, n_particles=10_000, seed=0, width=6.0) -> GridSpec:
    """Grid spanning mean +- ``width`` sample standard deviations over steps 1..tau."""
    rng = np.random.default_rng(seed)
    x = np.tile(np.asarray(x0, dtype=float), (n_particles, 1))
    lo = np.full(sys.n, np.inf)
    hi = np.full(sys.n, -np.inf)
    for _ in range(tau):
        x = x @ sys.A.T + law.sample(rng, n_particles) @ sys.B.T
        m, s = x.mean(axis=0), x.std(axis=0)
        lo = np.minimum(lo, m - width * s)
        hi = np.maximum(hi, m + width * s)
    return GridSpec(lo, hi, num)


def iterative_fsrpd_oracle(sys: LtiSystem, law: DisturbanceLaw, x0, tau: int, grid: GridSpec,
                           mass_tol: float = 0.01, order: int = 3) -> IterativeResult:
    """Grid density of ``x[tau]`` by repeated transform-and-convolve steps.

    Step ``t -> t+1`` maps the density through ``A`` (``|A|^-1 psi(A^-1 y)`` by
    spline interpolation of the given ``order``) and convolves it with the sampled density of ``B w``
    by FFT. The first step is the density of ``B w`` shifted to ``A x0``.
    """
    tau = sys.check_step(tau)
    x0 = _check_x0(sys, x0)
    if grid.dim != sys.n:
        raise ShapeError(f"grid has dimension {grid.dim}, system has {sys.n}")
    detA = np.linalg.det(sys.A)
    if abs(detA) < 1e-12:
        raise UnsupportedError("the iterative oracle needs an invertible A")
    Ainv = np.linalg.inv(sys.A)
    bw_pdf, bw_mean, bw_sd = _bw_density(sys, law)
    h = grid.spacing
    pts = grid.points()

    # kernel on offsets (m + c) h, m in [-M, M], c the grid shift nearest the mean of B w
    c = np.round(bw_mean / h).astype(int)
    M = np.ceil((np.abs(bw_mean) + 8.0 * bw_sd) / h).astype(int) + np.abs(c)
    k_axes = [(np.arange(-Mi, Mi + 1) + ci) * hi for Mi, ci, hi in zip(M, c, h)]
    kernel = bw_pdf(np.stack(np.meshgrid(*k_axes, indexing="ij"), axis=-1))
    vol = grid.cell_volume

    density = bw_pdf(pts - sys.A @ x0)
    masses = [float(density.sum() * vol)]
    _check_mass(masses[-1], 1, mass_tol)
    for step in range(2, tau + 1):
        # index coordinates of A^-1 y on the grid
        src = (pts @ Ainv.T - grid.lower) / h
        coords = np.moveaxis(src, -1, 0)
        moved = map_coordinates(density, coords, order=order, mode="constant", cval=0.0) / abs(detA)
        full = fftconvolve(moved, kernel, mode="full") * vol
        sl = tuple(slice(Mi - ci, Mi - ci + ni) for Mi, ci, ni in zip(M, c, grid.num))
        density = np.clip(full[sl], 0.0, None)
        masses.append(float(density.sum() * vol))
        _check_mass(masses[-1], step, mass_tol)
    return IterativeResult(grid, density, tuple(masses))


def _check_mass(mass, step, tol):
    if abs(mass - 1.0) > tol:
        raise AccuracyError(
            f"grid too coarse or too narrow: mass {mass:.4f} at step {step}", residual=abs(mass - 1.0)
        )
