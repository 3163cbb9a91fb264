"""Euclidean projections onto simple constraint sets."""
from dataclasses import dataclass

import numpy as np

from penglm.exceptions import InfeasibleError, InvalidInputError

CONSTRAINT_KINDS = (
    "positive",
    "box",
    "simplex",
    "l1_ball",
    "l2_ball",
    "linear_equality",
    "isotonic",
    "sparse",
    "rank",
)
CONVEX_KINDS = CONSTRAINT_KINDS[:7]


@dataclass
class ConstraintSpec:
    """Constraint set.

    ``lower``/``upper`` are the box bounds, ``radius`` the ball radius,
    ``A``/``b`` the linear equality ``A x = b`` and ``k`` the sparsity level
    or rank bound.
    """

    kind: str
    lower: float | np.ndarray = -np.inf
    upper: float | np.ndarray = np.inf
    radius: float = 1.0
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    k: int = 1

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise InvalidInputError(f"unknown constraint {self.kind!r}")
        if self.kind == "box" and np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise InvalidInputError("box needs lower <= upper")
        if self.kind in ("l1_ball", "l2_ball") and not self.radius > 0:
            raise InvalidInputError("ball radius must be positive")
        if self.kind in ("sparse", "rank") and self.k < 1:
            raise InvalidInputError("k must be at least 1")
        if self.kind == "linear_equality":
            if self.A is None or self.b is None:
                raise InvalidInputError("linear_equality needs A and b")
            self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
            self.b = np.asarray(self.b, dtype=float).ravel()
            pinv = np.linalg.pinv(self.A)
            resid = self.A @ (pinv @ self.b) - self.b
            if np.linalg.norm(resid) > 1e-9 * max(1.0, np.linalg.norm(self.b)):
                raise InfeasibleError("A x = b has no solution")
            self._pinv = pinv

    @property
    def is_convex(self):
        return self.kind in CONVEX_KINDS


def project_simplex(x, radius=1.0):
    """Projection onto {z >= 0, sum(z) = radius} by sorting."""
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - radius
    ind = np.arange(1, x.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(x - theta, 0.0)


def project_l1_ball(x, radius):
    if np.abs(x).sum() <= radius:
        return x.copy()
    return np.sign(x) * project_simplex(np.abs(x), radius)


def isotonic_regression(x, weights=None):
    """Pool adjacent violators: nondecreasing least squares fit to x."""
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    means, wts, sizes = [], [], []
    for xi, wi in zip(x, w):
        means.append(xi)
        wts.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), wts.pop(), sizes.pop()
            w1 = wts[-1]
            means[-1] = (w1 * means[-1] + w2 * m2) / (w1 + w2)
            wts[-1] = w1 + w2
            sizes[-1] += s2
    return np.repeat(means, sizes)


def project(spec, x):
    """Euclidean projection of x onto the constraint set.

    The sparse and rank sets are not convex; their projections return one
    global minimizer (largest magnitudes, ties broken by index, or leading
    singular values).
    """
    x = np.asarray(x, dtype=float)
    kind = spec.kind
    if kind == "positive":
        return np.maximum(x, 0.0)
    if kind == "box":
        return np.clip(x, spec.lower, spec.upper)
    if kind == "simplex":
        return project_simplex(x.ravel()).reshape(x.shape)
    if kind == "l1_ball":
        return project_l1_ball(x.ravel(), spec.radius).reshape(x.shape)
    if kind == "l2_ball":
        nrm = np.linalg.norm(x)
        return x.copy() if nrm <= spec.radius else x * (spec.radius / nrm)
    if kind == "linear_equality":
        if x.ndim != 1 or x.shape[0] != spec.A.shape[1]:
            raise InvalidInputError("x does not match the columns of A")
        return x - spec._pinv @ (spec.A @ x - spec.b)
    if kind == "isotonic":
        if x.ndim != 1:
            raise InvalidInputError("isotonic constraint needs a vector")
        return isotonic_regression(x)
    if kind == "sparse":
        flat = x.ravel()
        out = np.zeros_like(flat)
        keep = np.argsort(-np.abs(flat), kind="stable")[:spec.k]
        out[keep] = flat[keep]
        return out.reshape(x.shape)
    if kind == "rank":
        if x.ndim != 2:
            raise InvalidInputError("rank constraint needs a matrix")
        U, s, Vt = np.linalg.svd(x, full_matrices=False)
        s[spec.k:] = 0.0
        return (U * s) @ Vt
    raise InvalidInputError(kind)  # pragma: no cover
