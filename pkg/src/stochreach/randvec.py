"""Disturbance laws as density / characteristic-function pairs.

Every law carries its density ``pdf`` and characteristic function
``cf(alpha) = E[exp(j alpha^T w)]`` in closed form, together with capability
flags declared by the constructor (log-concavity, square integrability and the
support class). Numerical inversion is only a fallback used elsewhere.

All evaluators are vectorised over leading axes: ``alpha`` and ``z`` have shape
``(..., p)`` and the result has shape ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

SUPPORT_KINDS = ("all_of_Rp", "nonneg_orthant", "point", "box")


@dataclass(frozen=True)
class Support:
    kind: str
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in SUPPORT_KINDS:
            raise ValidationError(f"unknown support kind {self.kind!r}")


def _last_dim(x, p, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != p:
        raise ShapeError(f"{name} must have trailing dimension {p}, got {x.shape}")
    return x


def gaussian_cf(mu, Sigma, alpha):
    """CF of ``N(mu, Sigma)``: ``exp(j alpha^T mu - alpha^T Sigma alpha / 2)``."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    Sigma = np.array(Sigma, dtype=float, ndmin=2)
    _check_covariance(Sigma, mu.size)
    alpha = _last_dim(alpha, mu.size, "alpha")
    quad = np.einsum("...i,ij,...j->...", alpha, Sigma, alpha)
    return np.exp(1j * (alpha @ mu) - 0.5 * quad)


def exponential_product_cf(lambdas, alpha):
    """CF of independent exponentials: ``prod_i lambda_i / (lambda_i - j alpha_i)``."""
    lambdas = np.asarray(lambdas, dtype=float).reshape(-1)
    if np.any(lambdas <= 0):
        raise ValidationError("exponential rates must be strictly positive")
    alpha = _last_dim(alpha, lambdas.size, "alpha")
    return np.prod(lambdas / (lambdas - 1j * alpha), axis=-1)


def affine_push_cf(law_cf, F, G, beta):
    """CF of ``F w + G`` at ``beta``: ``exp(j beta^T G) * law_cf(F^T beta)``."""
    F = np.array(F, dtype=float, ndmin=2)
    G = np.asarray(G, dtype=float).reshape(-1)
    if G.size != F.shape[0]:
        raise ShapeError(f"offset has length {G.size}, expected {F.shape[0]}")
    beta = _last_dim(beta, F.shape[0], "beta")
    return np.exp(1j * (beta @ G)) * law_cf(beta @ F)


def marginal_cf(cf, keep, gamma, dim):
    """CF of the marginal over coordinates ``keep`` of a ``dim``-variate CF.

    ``gamma`` is scattered into the kept slots and every other frequency is
    set to zero.
    """
    keep = [int(i) for i in keep]
    if any(i < 0 or i >= dim for i in keep) or len(set(keep)) != len(keep):
        raise ValidationError(f"marginal indices {keep} invalid for dimension {dim}")
    gamma = _last_dim(gamma, len(keep), "gamma")
    full = np.zeros(gamma.shape[:-1] + (dim,))
    full[..., keep] = gamma
    return cf(full)


def _check_covariance(Sigma, p):
    if Sigma.shape != (p, p):
        raise ShapeError(f"covariance must be {p}x{p}, got {Sigma.shape}")
    scale = max(1.0, float(np.max(np.abs(Sigma))))
    if not np.allclose(Sigma, Sigma.T, rtol=0, atol=1e-12 * scale):
        raise ValidationError("covariance is not symmetric")
    if np.min(np.linalg.eigvalsh(Sigma)) < -1e-10 * scale:
        raise ValidationError("covariance is not positive semidefinite")


class DisturbanceLaw:
    """Base class; subclasses fill in ``cf``, ``pdf`` and ``sample``."""

    dim: int
    log_concave: bool
    square_integrable: bool
    support: Support
    #: coordinates are mutually independent (the CF factorises per coordinate)
    independent_coords: bool = False

    def cf(self, alpha):
        raise NotImplementedError

    def pdf(self, z):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def mean(self) -> np.ndarray:
        raise NotImplementedError

    def covariance(self) -> np.ndarray:
        raise NotImplementedError

    def total_mass(self, nodes: int = 64, width: float = 20.0) -> float:
        """Integrate ``pdf`` over a truncated box with tensor Gauss-Legendre.

        The box spans ``width`` standard deviations around the mean, clipped to
        the support when it is bounded below.
        """
        if self.support.kind == "point":
            return 1.0
        mu = self.mean()
        sd = np.sqrt(np.diag(self.covariance()))
        lo = mu - width * sd
        hi = mu + width * sd
        if self.support.lower is not None:
            lo = np.maximum(lo, self.support.lower)
        if self.support.upper is not None:
            hi = np.minimum(hi, self.support.upper)
        x, w = np.polynomial.legendre.leggauss(nodes)
        # panels keep the kink at a support boundary on a panel edge
        panels = 8
        axes_pts, axes_w = [], []
        for a, b in zip(lo, hi):
            edges = np.linspace(a, b, panels + 1)
            half = np.diff(edges)[:, None] / 2
            mid = (edges[:-1] + edges[1:])[:, None] / 2
            axes_pts.append((half * x + mid).ravel())
            axes_w.append((half * w).ravel())
        grids = np.meshgrid(*axes_pts, indexing="ij")
        pts = np.stack(grids, axis=-1)
        wts = axes_w[0]
        for ww in axes_w[1:]:
            wts = np.multiply.outer(wts, ww)
        return float(np.sum(wts * self.pdf(pts)))


class GaussianLaw(DisturbanceLaw):
    """``N(mean, cov)``; a singular ``cov`` gives a density on an affine subspace."""

    def __init__(self, mean, cov):
        self._mu = np.asarray(mean, dtype=float).reshape(-1)
        self._cov = np.array(cov, dtype=float, ndmin=2)
        _check_covariance(self._cov, self._mu.size)
        self._cov = 0.5 * (self._cov + self._cov.T)
        self.dim = self._mu.size
        self.log_concave = True
        self.square_integrable = True
        self.support = Support("all_of_Rp")
        evals, evecs = np.linalg.eigh(self._cov)
        cut = max(evals.max(), 0.0) * 1e-12
        keep = evals > cut
        self.rank = int(keep.sum())
        self._basis = evecs[:, keep]
        self._null = evecs[:, ~keep]
        self._evals = evals[keep]
        self.degenerate = self.rank < self.dim
        self.independent_coords = bool(np.count_nonzero(self._cov - np.diag(np.diag(self._cov))) == 0)

    def mean(self):
        return self._mu.copy()

    def covariance(self):
        return self._cov.copy()

    def cf(self, alpha):
        return gaussian_cf(self._mu, self._cov, alpha)

    def pdf(self, z):
        """Density with respect to Lebesgue measure on the support subspace.

        Points off the support of a degenerate law get density 0.
        """
        z = _last_dim(z, self.dim, "z")
        d = z - self._mu
        if self.rank == 0:
            off = np.linalg.norm(d, axis=-1) > 1e-12
            return np.where(off, 0.0, np.inf)
        coords = d @ self._basis
        quad = np.sum(coords**2 / self._evals, axis=-1)
        logdet = np.sum(np.log(self._evals))
        dens = np.exp(-0.5 * quad - 0.5 * logdet - 0.5 * self.rank * np.log(2 * np.pi))
        if self.degenerate:
            resid = np.linalg.norm(d @ self._null, axis=-1)
            scale = 1e-9 * max(1.0, float(np.sqrt(self._evals.max())))
            dens = np.where(resid > scale, 0.0, dens)
        return dens

    def sample(self, rng, size):
        z = rng.standard_normal((size, self.rank))
        return self._mu + (z * np.sqrt(self._evals)) @ self._basis.T

    def __repr__(self):
        return f"GaussianLaw(mean={self._mu.tolist()}, cov={self._cov.tolist()})"


class ExponentialLaw(DisturbanceLaw):
    """Independent exponential coordinates with the given rates."""

    def __init__(self, rates):
        self.rates = np.asarray(rates, dtype=float).reshape(-1)
        if np.any(self.rates <= 0):
            raise ValidationError("exponential rates must be strictly positive")
        self.dim = self.rates.size
        self.log_concave = True
        self.square_integrable = True
        self.support = Support("nonneg_orthant", lower=np.zeros(self.dim))
        self.independent_coords = True

    def mean(self):
        return 1.0 / self.rates

    def covariance(self):
        return np.diag(1.0 / self.rates**2)

    def cf(self, alpha):
        return exponential_product_cf(self.rates, alpha)

    def pdf(self, z):
        z = _last_dim(z, self.dim, "z")
        inside = np.all(z >= 0, axis=-1)
        val = np.prod(self.rates) * np.exp(-np.clip(z, 0, None) @ self.rates)
        return np.where(inside, val, 0.0)

    def sample(self, rng, size):
        u = rng.random((size, self.dim))
        # inverse CDF; 1 - u keeps the argument of log away from zero
        return -np.log1p(-u) / self.rates

    def __repr__(self):
        return f"ExponentialLaw(rates={self.rates.tolist()})"


class UniformLaw(DisturbanceLaw):
    """Uniform distribution on an axis-aligned box."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float).reshape(-1)
        self.upper = np.asarray(upper, dtype=float).reshape(-1)
        if self.lower.shape != self.upper.shape or np.any(self.upper <= self.lower):
            raise ValidationError("uniform law needs lower < upper componentwise")
        self.dim = self.lower.size
        self.log_concave = True
        self.square_integrable = True
        self.support = Support("box", lower=self.lower, upper=self.upper)
        self.independent_coords = True

    def mean(self):
        return 0.5 * (self.lower + self.upper)

    def covariance(self):
        return np.diag((self.upper - self.lower) ** 2 / 12.0)

    def cf(self, alpha):
        alpha = _last_dim(alpha, self.dim, "alpha")
        width = self.upper - self.lower
        center = self.mean()
        half = 0.5 * alpha * width
        # sin(x)/x written via np.sinc, which is sin(pi x)/(pi x)
        sinc = np.sinc(half / np.pi)
        return np.exp(1j * (alpha @ center)) * np.prod(sinc, axis=-1)

    def pdf(self, z):
        z = _last_dim(z, self.dim, "z")
        inside = np.all((z >= self.lower) & (z <= self.upper), axis=-1)
        return np.where(inside, 1.0 / np.prod(self.upper - self.lower), 0.0)

    def sample(self, rng, size):
        return self.lower + rng.random((size, self.dim)) * (self.upper - self.lower)


class DiracLaw(DisturbanceLaw):
    """Point mass; its CF has unit modulus everywhere."""

    def __init__(self, location):
        self.location = np.asarray(location, dtype=float).reshape(-1)
        self.dim = self.location.size
        self.log_concave = True
        self.square_integrable = False
        self.support = Support("point", lower=self.location, upper=self.location)
        self.independent_coords = True

    def mean(self):
        return self.location.copy()

    def covariance(self):
        return np.zeros((self.dim, self.dim))

    def cf(self, alpha):
        alpha = _last_dim(alpha, self.dim, "alpha")
        return np.exp(1j * (alpha @ self.location))

    def pdf(self, z):
        z = _last_dim(z, self.dim, "z")
        at = np.linalg.norm(z - self.location, axis=-1) <= 1e-12
        return np.where(at, np.inf, 0.0)

    def sample(self, rng, size):
        return np.tile(self.location, (size, 1))


class ConcatLaw:
    """Law of ``tau`` IID copies stacked into one vector of length ``tau * p``."""

    def __init__(self, base: DisturbanceLaw, tau: int):
        if tau < 1:
            raise ValidationError("tau must be at least 1")
        self.base = base
        self.tau = int(tau)
        self.dim = self.tau * base.dim

    def cf(self, alpha):
        alpha = _last_dim(alpha, self.dim, "alpha")
        p = self.base.dim
        out = np.ones(alpha.shape[:-1], dtype=complex)
        for t in range(self.tau):
            out = out * self.base.cf(alpha[..., t * p:(t + 1) * p])
        return out

    def pdf(self, z):
        z = _last_dim(z, self.dim, "z")
        p = self.base.dim
        out = np.ones(z.shape[:-1])
        for t in range(self.tau):
            out = out * self.base.pdf(z[..., t * p:(t + 1) * p])
        return out
