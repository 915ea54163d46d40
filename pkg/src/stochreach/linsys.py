"""Discrete-time LTI systems and the controlled point-mass pursuer.

The uncontrolled stochastic system is ``x[t+1] = A x[t] + B w[t]`` with IID
disturbances. Unrolled over ``tau`` steps, ``x[tau] = A^tau x0 + C_tau W`` where
``C_tau = [B, AB, ..., A^(tau-1) B]`` and ``W`` stacks ``w[tau-1], ..., w[0]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StepRangeError, UnsupportedError, ValidationError
from .polytope import Polytope


def _as_matrix(M, name):
    M = np.array(M, dtype=float, ndmin=2)
    if M.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D matrix")
    M.setflags(write=False)
    return M


def _as_vector(v, n, name):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != n:
        raise ShapeError(f"{name} must have length {n}, got {v.size}")
    return v


@dataclass(frozen=True)
class LtiSystem:
    """``x[t+1] = A x[t] + B w[t]`` over a horizon of ``T`` steps.

    ``position_indices`` names the state coordinates that hold the planar
    position; capture sets are defined over them.
    """

    A: np.ndarray
    B: np.ndarray
    T: int
    position_indices: tuple = (0, 1)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ShapeError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ShapeError(f"B must have {A.shape[0]} rows, got {B.shape[0]}")
        if int(self.T) != self.T or self.T < 1:
            raise ValidationError("horizon T must be a positive integer")
        pos = tuple(int(i) for i in self.position_indices)
        if any(i < 0 or i >= A.shape[0] for i in pos) or len(set(pos)) != len(pos):
            raise ValidationError(f"position_indices {pos} invalid for n={A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "position_indices", pos)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    def check_step(self, tau):
        if int(tau) != tau or not 1 <= tau <= self.T:
            raise StepRangeError(f"tau={tau} outside [1, {self.T}]")
        return int(tau)

    def power(self, k: int) -> np.ndarray:
        """``A^k`` by repeated multiplication."""
        P = np.eye(self.n)
        for _ in range(k):
            P = self.A @ P
        return P


def concat_matrix(sys: LtiSystem, tau: int) -> np.ndarray:
    """Return ``[B, AB, ..., A^(tau-1) B]`` of shape ``(n, tau * p)``."""
    tau = sys.check_step(tau)
    blocks = [sys.B]
    for _ in range(tau - 1):
        blocks.append(sys.A @ blocks[-1])
    return np.hstack(blocks)


def mean_trajectory(sys: LtiSystem, x0, mu_w, tau: int) -> np.ndarray:
    """State at step ``tau`` when every disturbance equals its mean."""
    tau = sys.check_step(tau)
    x0 = _as_vector(x0, sys.n, "x0")
    mu_w = _as_vector(mu_w, sys.p, "mu_w")
    C = concat_matrix(sys, tau)
    return sys.power(tau) @ x0 + C @ np.tile(mu_w, tau)


def point_mass(Ts: float, T: int) -> LtiSystem:
    """Planar point mass driven by a random velocity, ``B = Ts * I``."""
    return LtiSystem(np.eye(2), Ts * np.eye(2), T, (0, 1))


def double_integrator(Ts: float, T: int) -> LtiSystem:
    """Planar double integrator with state ``[x, vx, y, vy]`` driven by acceleration."""
    A = np.kron(np.eye(2), [[1.0, Ts], [0.0, 1.0]])
    B = np.kron(np.eye(2), [[Ts**2 / 2.0], [Ts]])
    return LtiSystem(A, B, T, (0, 2))


@dataclass(frozen=True)
class Pursuer:
    """Planar pursuer ``x[t+1] = x[t] + Ts * u[t]`` with ``u[t]`` in ``U``."""

    x0: np.ndarray
    U: Polytope
    Ts: float
    B_R: np.ndarray = field(default=None)

    def __post_init__(self):
        x0 = _as_vector(self.x0, 2, "pursuer x0")
        object.__setattr__(self, "x0", x0)
        if self.Ts <= 0:
            raise ValidationError("sampling time must be positive")
        if self.U.dim != 2:
            raise ShapeError("input set must be 2-dimensional")
        if self.B_R is None:
            object.__setattr__(self, "B_R", self.Ts * np.eye(2))

    def controls_matrix(self, tau: int) -> np.ndarray:
        """``[B_R, ..., B_R]`` mapping ``tau`` stacked inputs to total displacement."""
        return np.tile(self.B_R, (1, tau))


def pursuer_reach_set(p: Pursuer, tau: int) -> Polytope:
    """Positions the pursuer can occupy after ``tau`` steps: ``{x0} + tau * (B_R U)``."""
    if int(tau) != tau or tau < 1:
        raise StepRangeError(f"tau={tau} must be a positive integer")
    if not p.U.is_bounded():
        raise UnsupportedError("pursuer input set must be bounded")
    if p.U.is_empty():
        raise UnsupportedError("pursuer input set is empty")
    step = p.U.linear_image_box(p.B_R)
    lower, upper = step.box_bounds()
    return Polytope.from_box(p.x0 + tau * lower, p.x0 + tau * upper)
