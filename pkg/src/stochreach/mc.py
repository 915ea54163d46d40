"""Monte-Carlo particle simulation of the uncontrolled target.

Random numbers come from counter-based Philox streams keyed by
``(seed, chunk, t)``: the disturbance drawn for particle ``i`` at time ``t``
depends only on those keys. Clouds are therefore reproducible, independent of
how the work is split, and prefix-consistent across horizons (the cloud at
step ``tau`` is the one obtained by stopping the longer simulation early).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .capture import CaptureBox
from .errors import ShapeError, ValidationError
from .fsr import GridSpec
from .linsys import LtiSystem
from .randvec import DisturbanceLaw

log = logging.getLogger(__name__)

CHUNK = 65_536


@dataclass(frozen=True)
class ParticleCloud:
    tau: int
    particles: np.ndarray
    seed: int
    positions: tuple = (0, 1)

    @property
    def N(self) -> int:
        return self.particles.shape[0]

    @property
    def position_samples(self) -> np.ndarray:
        return self.particles[:, list(self.positions)]


def stream(seed: int, chunk: int, t: int) -> np.random.Generator:
    """Generator for particle chunk ``chunk`` at time ``t``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chunk, t])))


def simulate_all(sys: LtiSystem, law: DisturbanceLaw, x0, T: int, N: int, seed: int = 0):
    """Clouds for every step ``1..T`` from one simulation pass."""
    if N < 1:
        raise ValidationError("particle count must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != sys.n:
        raise ShapeError(f"x0 must have length {sys.n}")
    if law.dim != sys.p:
        raise ShapeError(f"law has dimension {law.dim}, system expects {sys.p}")
    x = np.tile(x0, (N, 1))
    clouds = []
    for t in range(T):
        w = np.empty((N, sys.p))
        for c, start in enumerate(range(0, N, CHUNK)):
            stop = min(start + CHUNK, N)
            w[start:stop] = law.sample(stream(seed, c, t), stop - start)
        x = x @ sys.A.T + w @ sys.B.T
        clouds.append(ParticleCloud(t + 1, x.copy(), seed, sys.position_indices))
    return clouds


def simulate(sys: LtiSystem, law: DisturbanceLaw, x0, tau: int, N: int, seed: int = 0) -> ParticleCloud:
    """``N`` independent samples of ``x[tau]``."""
    if int(tau) != tau or tau < 1:
        raise ValidationError("tau must be a positive integer")
    return simulate_all(sys, law, x0, int(tau), N, seed)[-1]


def empirical_capture(cloud: ParticleCloud, box: CaptureBox):
    """Fraction of particles inside the box and its binomial standard error."""
    inside = box.contains(cloud.position_samples)
    p = float(inside.mean())
    return p, float(np.sqrt(p * (1 - p) / cloud.N))


def empirical_density_grid(cloud: ParticleCloud, grid: GridSpec, min_coverage: float = 0.99):
    """Histogram density (count / (N * cell area)) on cells centred at the grid points."""
    if grid.dim != len(cloud.positions):
        raise ShapeError("grid dimension must match the position dimension")
    h = grid.spacing
    edges = [np.concatenate([ax - hi / 2, [ax[-1] + hi / 2]]) for ax, hi in zip(grid.axes, h)]
    counts, _ = np.histogramdd(cloud.position_samples, bins=edges)
    coverage = counts.sum() / cloud.N
    if coverage < min_coverage:
        msg = f"grid holds only {coverage:.1%} of the particles"
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return counts / (cloud.N * grid.cell_volume)
