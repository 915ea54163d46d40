"""Convex polytopes in halfspace form ``{x : H x <= k}``.

Only what the reach-set and capture computations need is implemented: box
construction and detection, membership, Euclidean projection, emptiness of
intersections (by linear programming), and interval-arithmetic Minkowski sums
and linear images for boxes.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog, minimize

from .errors import ShapeError, UnsupportedError, ValidationError


class Polytope:
    """A convex polytope ``{x in R^n : H x <= k}``.

    Parameters
    ----------
    H : (m, n) array_like
        Facet normals.
    k : (m,) array_like
        Facet offsets.
    """

    def __init__(self, H, k):
        H = np.array(H, dtype=float, ndmin=2)
        k = np.array(k, dtype=float).reshape(-1)
        if H.shape[0] != k.shape[0]:
            raise ShapeError(f"H has {H.shape[0]} rows but k has {k.shape[0]} entries")
        self.H = H
        self.k = k
        self.H.setflags(write=False)
        self.k.setflags(write=False)

    @classmethod
    def from_box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise ShapeError("box bounds must have the same length")
        if np.any(lower > upper):
            raise ValidationError("box lower bound exceeds upper bound")
        n = lower.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    @classmethod
    def from_point(cls, point):
        return cls.from_box(point, point)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def box_bounds(self):
        """Return ``(lower, upper)`` if this is an axis-aligned box, else ``None``."""
        n = self.dim
        lower = np.full(n, -np.inf)
        upper = np.full(n, np.inf)
        for row, off in zip(self.H, self.k):
            nz = np.flatnonzero(row)
            if nz.size != 1:
                return None
            i = nz[0]
            if row[i] > 0:
                upper[i] = min(upper[i], off / row[i])
            else:
                lower[i] = max(lower[i], off / row[i])
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            return None
        return lower, upper

    @property
    def is_box(self) -> bool:
        return self.box_bounds() is not None

    def is_bounded(self) -> bool:
        if self.is_box:
            return True
        n = self.dim
        for i in range(n):
            for sign in (1.0, -1.0):
                c = np.zeros(n)
                c[i] = -sign
                res = linprog(c, A_ub=self.H, b_ub=self.k, bounds=[(None, None)] * n)
                if res.status == 3:
                    return False
        return True

    def is_empty(self) -> bool:
        n = self.dim
        res = linprog(np.zeros(n), A_ub=self.H, b_ub=self.k, bounds=[(None, None)] * n)
        return res.status == 2

    def contains(self, x, tol=0.0) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.all(self.H @ x <= self.k + tol))

    def vertices(self):
        """Vertices of a bounded polytope (brute force over facet pairs for n <= 3)."""
        box = self.box_bounds()
        if box is not None:
            lower, upper = box
            return np.array(list(itertools.product(*zip(lower, upper))))
        n = self.dim
        if n > 3:
            raise UnsupportedError("vertex enumeration is limited to n <= 3 for non-box polytopes")
        verts = []
        for rows in itertools.combinations(range(self.H.shape[0]), n):
            sub = self.H[list(rows)]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            v = np.linalg.solve(sub, self.k[list(rows)])
            if self.contains(v, tol=1e-9):
                verts.append(v)
        if not verts:
            return np.empty((0, n))
        return np.unique(np.round(np.array(verts), 12), axis=0)

    def project(self, x):
        """Euclidean projection of ``x`` onto the polytope."""
        x = np.asarray(x, dtype=float).reshape(-1)
        box = self.box_bounds()
        if box is not None:
            return np.clip(x, *box)
        if self.contains(x):
            return x.copy()
        cons = {"type": "ineq", "fun": lambda z: self.k - self.H @ z, "jac": lambda z: -self.H}
        res = minimize(
            lambda z: 0.5 * np.sum((z - x) ** 2),
            self.chebyshev_center(),
            jac=lambda z: z - x,
            constraints=[cons],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
        return res.x

    def chebyshev_center(self):
        n = self.dim
        norms = np.linalg.norm(self.H, axis=1)
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([self.H, norms[:, None]])
        res = linprog(c, A_ub=A, b_ub=self.k, bounds=[(None, None)] * n + [(0, None)])
        if res.status != 0:
            raise UnsupportedError("polytope is empty or unbounded")
        return res.x[:n]

    def intersects(self, other: "Polytope") -> bool:
        if other.dim != self.dim:
            raise ShapeError("polytopes live in different dimensions")
        joint = Polytope(np.vstack([self.H, other.H]), np.concatenate([self.k, other.k]))
        return not joint.is_empty()

    def translate(self, offset) -> "Polytope":
        offset = np.asarray(offset, dtype=float).reshape(-1)
        return Polytope(self.H, self.k + self.H @ offset)

    def scale(self, factor: float) -> "Polytope":
        if factor <= 0:
            raise ValidationError("scale factor must be positive")
        return Polytope(self.H, self.k * factor)

    def linear_image_box(self, M) -> "Polytope":
        """Interval hull of ``M @ P`` for a box ``P`` (exact when ``M`` is diagonal)."""
        box = self.box_bounds()
        if box is None:
            raise UnsupportedError("linear images are only implemented for boxes")
        M = np.atleast_2d(np.asarray(M, dtype=float))
        lower, upper = box
        center = 0.5 * (lower + upper)
        radius = 0.5 * (upper - lower)
        c = M @ center
        r = np.abs(M) @ radius
        return Polytope.from_box(c - r, c + r)

    def minkowski_sum(self, other: "Polytope") -> "Polytope":
        """Minkowski sum of two boxes by interval arithmetic."""
        a, b = self.box_bounds(), other.box_bounds()
        if a is None or b is None:
            raise UnsupportedError("Minkowski sums are only implemented for boxes")
        return Polytope.from_box(a[0] + b[0], a[1] + b[1])

    def __repr__(self):
        box = self.box_bounds()
        if box is not None:
            return f"Polytope.box(lower={box[0].tolist()}, upper={box[1].tolist()})"
        return f"Polytope(m={self.H.shape[0]}, n={self.dim})"
