"""Convex penalties, their proximal operators and the SCAD/MCP generators.

``prox(spec, x, step)`` returns ``argmin_z ||x - z||^2 / (2 step) + pen(z)``.
"""
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from penglm.exceptions import InvalidInputError, UnsupportedError

PENALTY_KINDS = (
    "lasso",
    "ridge",
    "generalized_ridge",
    "group_lasso",
    "multi_task_lasso",
    "tv1",
    "nuclear_norm",
    "elastic_net",
    "sparse_group_lasso",
    "sparse_fused_lasso",
    "infimal_sum",
)

PROXIMABLE_KINDS = tuple(k for k in PENALTY_KINDS if k != "infimal_sum")


@dataclass
class PenaltySpec:
    """Penalty kind and parameters.

    Parameters
    ----------
    kind : str
    pen_val : float
        Overall tuning parameter lambda.
    weights : array-like, optional
        Entry weights (lasso, ridge, elastic_net), group weights (group_lasso,
        sparse_group_lasso), row weights (multi_task_lasso), difference
        weights (tv1, sparse_fused_lasso) or singular value weights
        (nuclear_norm, non-decreasing). Defaults to ones, or to the square
        root of the group sizes for group penalties.
    groups : list of index arrays, optional
        Disjoint groups; coordinates outside every group are unpenalized by
        the group term.
    mix : float
        Mixing parameter alpha for elastic_net, sparse_group_lasso and
        sparse_fused_lasso: ``lam * alpha * ||b||_1 + lam * (1 - alpha) * other``.
    tikhonov : ndarray, optional
        Matrix Gamma of the generalized ridge ``lam / 2 * ||Gamma b||^2``.
    components : list of PenaltySpec, optional
        Components of an infimal sum penalty.
    """

    kind: str
    pen_val: float = 1.0
    weights: np.ndarray | None = None
    groups: list | None = None
    mix: float = 0.5
    tikhonov: np.ndarray | None = None
    components: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise InvalidInputError(f"unknown penalty {self.kind!r}")
        if not self.pen_val >= 0:
            raise InvalidInputError("pen_val must be nonnegative")
        if not 0 <= self.mix <= 1:
            raise InvalidInputError("mix must lie in [0, 1]")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or np.any(np.isnan(w)):
                raise InvalidInputError("penalty weights must be nonnegative")
            if self.kind == "nuclear_norm" and np.any(np.diff(w) < 0):
                raise InvalidInputError("nuclear norm weights must be non-decreasing")
            self.weights = w
        if self.groups is not None:
            self.groups = [np.asarray(g, dtype=int).ravel() for g in self.groups]
            flat = np.concatenate(self.groups) if self.groups else np.array([], int)
            if len(np.unique(flat)) != len(flat):
                raise InvalidInputError("groups must be disjoint")
        elif self.kind in ("group_lasso", "sparse_group_lasso"):
            raise InvalidInputError(f"{self.kind} needs groups")
        if self.kind == "generalized_ridge":
            if self.tikhonov is None:
                raise InvalidInputError("generalized_ridge needs a tikhonov matrix")
            self.tikhonov = np.atleast_2d(np.asarray(self.tikhonov, dtype=float))
        if self.kind == "infimal_sum" and not self.components:
            raise InvalidInputError("infimal_sum needs at least one component")

    def with_pen_val(self, pen_val):
        return replace(self, pen_val=float(pen_val))

    def with_weights(self, weights):
        return replace(self, weights=None if weights is None else np.asarray(weights, float))

    @property
    def is_smooth(self):
        return self.kind in ("ridge", "generalized_ridge")


def group_weights(spec):
    if spec.weights is not None:
        return spec.weights
    return np.sqrt([len(g) for g in spec.groups])


def _entry_weights(spec, shape):
    w = spec.weights
    if w is None:
        return np.ones(shape)
    if w.shape == shape:
        return w
    if w.ndim == 1 and len(shape) == 2 and w.shape[0] == shape[0]:
        return np.broadcast_to(w[:, None], shape)
    return np.broadcast_to(w, shape)


def _need_vector(spec, beta):
    if beta.ndim != 1:
        raise InvalidInputError(f"{spec.kind} applies to vector coefficients")


def _need_matrix(spec, beta):
    if beta.ndim != 2:
        raise InvalidInputError(f"{spec.kind} applies to matrix coefficients")


def _diff_weights(spec, d):
    if spec.weights is None:
        return np.ones(d - 1)
    if spec.weights.shape != (d - 1,):
        raise InvalidInputError("tv1 weights must have length d - 1")
    return spec.weights


def _sv_weights(spec, k):
    if spec.weights is None:
        return np.ones(k)
    if spec.weights.shape != (k,):
        raise InvalidInputError(f"nuclear norm weights must have length {k}")
    return spec.weights


def penalty_value(spec, beta):
    """Penalty value.

    For infimal_sum ``beta`` is the list of split components and the
    component values are multiplied by the outer ``pen_val``.
    """
    lam = spec.pen_val
    kind = spec.kind
    if kind == "infimal_sum":
        if len(beta) != len(spec.components):
            raise InvalidInputError("infimal_sum needs one block per component")
        return float(lam * sum(penalty_value(c, b) for c, b in zip(spec.components, beta)))

    beta = np.asarray(beta, dtype=float)
    if kind == "lasso":
        return float(lam * np.sum(_entry_weights(spec, beta.shape) * np.abs(beta)))
    if kind == "ridge":
        return float(0.5 * lam * np.sum(_entry_weights(spec, beta.shape) * beta ** 2))
    if kind == "generalized_ridge":
        return float(0.5 * lam * np.sum((spec.tikhonov @ beta) ** 2))
    if kind == "group_lasso":
        _need_vector(spec, beta)
        w = group_weights(spec)
        return float(lam * sum(wg * np.linalg.norm(beta[g]) for g, wg in zip(spec.groups, w)))
    if kind == "multi_task_lasso":
        _need_matrix(spec, beta)
        w = _entry_weights(spec, (beta.shape[0],))
        return float(lam * w @ np.linalg.norm(beta, axis=1))
    if kind == "tv1":
        _need_vector(spec, beta)
        return float(lam * _diff_weights(spec, beta.size) @ np.abs(np.diff(beta)))
    if kind == "nuclear_norm":
        _need_matrix(spec, beta)
        sv = np.linalg.svd(beta, compute_uv=False)
        return float(lam * _sv_weights(spec, sv.size) @ sv)
    a = spec.mix
    if kind == "elastic_net":
        w = _entry_weights(spec, beta.shape)
        return float(lam * a * np.sum(w * np.abs(beta)) + lam * (1 - a) * 0.5 * np.sum(beta ** 2))
    if kind == "sparse_group_lasso":
        _need_vector(spec, beta)
        w = group_weights(spec)
        grp = sum(wg * np.linalg.norm(beta[g]) for g, wg in zip(spec.groups, w))
        return float(lam * a * np.abs(beta).sum() + lam * (1 - a) * grp)
    if kind == "sparse_fused_lasso":
        _need_vector(spec, beta)
        tv = _diff_weights(spec, beta.size) @ np.abs(np.diff(beta))
        return float(lam * a * np.abs(beta).sum() + lam * (1 - a) * tv)
    raise InvalidInputError(kind)  # pragma: no cover


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def _block_shrink(v, thresh):
    nrm = np.linalg.norm(v)
    if nrm <= thresh:
        return np.zeros_like(v)
    return (1 - thresh / nrm) * v


def _group_prox(x, groups, thresh):
    out = x.copy()
    for g, t in zip(groups, thresh):
        out[g] = _block_shrink(x[g], t)
    return out


def tv1_prox(x, thresh):
    """Exact prox of ``sum_j thresh[j] * |z[j+1] - z[j]|``.

    Dynamic programming over the chain: the derivative of each forward
    message is piecewise linear and is stored as a deque of knots, so the
    whole pass is linear time (amortized). ``thresh`` may be a scalar or a
    vector of length ``len(x) - 1``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n <= 1:
        return x.copy()
    thresh = np.broadcast_to(np.asarray(thresh, dtype=float), (n - 1,))

    # knot positions and "stored" derivative values; the true derivative at a
    # knot is stored + A * pos + B, tails have slope 1.
    pos = deque()
    val = deque()
    A, B = 1.0, -x[0]
    lower = np.empty(n - 1)
    upper = np.empty(n - 1)

    def true_val(i):
        return val[i] + A * pos[i] + B

    for k in range(n - 1):
        c = thresh[k]
        # left crossing of -c
        last_p = last_v = None
        while pos and true_val(0) < -c:
            last_p, last_v = pos[0], true_val(0)
            pos.popleft()
            val.popleft()
        left_p, left_v = last_p, last_v
        if pos:
            p1, v1 = pos[0], true_val(0)
            if last_p is None:
                lo = p1 + (-c - v1)
            elif v1 == last_v:
                lo = p1
            else:
                lo = last_p + (p1 - last_p) * (-c - last_v) / (v1 - last_v)
        elif last_p is not None:
            lo = last_p + (-c - last_v)
        else:
            lo = -B / A - c / A
        # right crossing of +c
        last_p = last_v = None
        while pos and true_val(-1) > c:
            last_p, last_v = pos[-1], true_val(-1)
            pos.pop()
            val.pop()
        if pos:
            p1, v1 = pos[-1], true_val(-1)
            if last_p is None:
                hi = p1 + (c - v1)
            elif v1 == last_v:
                hi = p1
            else:
                hi = p1 + (last_p - p1) * (c - v1) / (last_v - v1)
        elif last_p is not None and left_p is not None:
            hi = left_p + (last_p - left_p) * (c - left_v) / (last_v - left_v)
        elif last_p is not None:
            hi = last_p - (last_v - c)
        elif left_p is not None:
            hi = left_p + (c - left_v)
        else:
            hi = -B / A + c / A
        lo = min(lo, hi)
        lower[k], upper[k] = lo, hi
        pos.appendleft(lo)
        val.appendleft(-c - (A * lo + B))
        pos.append(hi)
        val.append(c - (A * hi + B))
        # add the next quadratic term (z - x[k+1])
        A += 1.0
        B -= x[k + 1]

    # root of the final derivative
    last_p = last_v = None
    i = 0
    while i < len(pos) and true_val(i) < 0:
        last_p, last_v = pos[i], true_val(i)
        i += 1
    if i < len(pos):
        p1, v1 = pos[i], true_val(i)
        if last_p is None:
            root = p1 - v1
        elif v1 == last_v:
            root = p1
        else:
            root = last_p + (p1 - last_p) * (-last_v) / (v1 - last_v)
    else:
        root = last_p - last_v

    z = np.empty(n)
    z[-1] = root
    for k in range(n - 2, -1, -1):
        z[k] = min(max(z[k + 1], lower[k]), upper[k])
    return z


def nuclear_prox(x, thresh):
    """Shrink singular values by ``thresh`` (scalar or per singular value)."""
    U, s, Vt = np.linalg.svd(x, full_matrices=False)
    s = np.maximum(s - thresh, 0.0)
    return (U * s) @ Vt


def prox(spec, x, step):
    """Proximal operator of the penalty with step size ``step``."""
    if not step > 0:
        raise InvalidInputError("prox step must be positive")
    x = np.asarray(x, dtype=float)
    t = step * spec.pen_val
    kind = spec.kind
    if t == 0:
        return x.copy()
    if kind == "lasso":
        return soft_threshold(x, t * _entry_weights(spec, x.shape))
    if kind == "ridge":
        return x / (1 + t * _entry_weights(spec, x.shape))
    if kind == "generalized_ridge":
        G = spec.tikhonov
        M = np.eye(x.shape[0]) + t * G.T @ G
        return np.linalg.solve(M, x)
    if kind == "group_lasso":
        _need_vector(spec, x)
        return _group_prox(x, spec.groups, t * group_weights(spec))
    if kind == "multi_task_lasso":
        _need_matrix(spec, x)
        w = _entry_weights(spec, (x.shape[0],))
        nrm = np.linalg.norm(x, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(nrm > t * w, 1 - t * w / nrm, 0.0)
        return x * scale[:, None]
    if kind == "tv1":
        _need_vector(spec, x)
        return tv1_prox(x, t * _diff_weights(spec, x.size))
    if kind == "nuclear_norm":
        _need_matrix(spec, x)
        return nuclear_prox(x, t * _sv_weights(spec, min(x.shape)))
    a = spec.mix
    if kind == "elastic_net":
        z = soft_threshold(x, t * a * _entry_weights(spec, x.shape))
        return z / (1 + t * (1 - a))
    if kind == "sparse_group_lasso":
        _need_vector(spec, x)
        z = soft_threshold(x, t * a)
        return _group_prox(z, spec.groups, t * (1 - a) * group_weights(spec))
    if kind == "sparse_fused_lasso":
        _need_vector(spec, x)
        z = tv1_prox(x, t * (1 - a) * _diff_weights(spec, x.size))
        return soft_threshold(z, t * a)
    raise UnsupportedError(
        f"{kind} has no closed-form prox; fit it with the infimal-sum solver")


# ---------------------------------------------------------------------------
# folded concave generators

_DEFAULT_SHAPE = {"scad": 3.7, "mcp": 3.0}


@dataclass(frozen=True)
class ConcaveGenerator:
    """SCAD (shape ``a > 2``) or MCP (shape ``gamma > 1``) function g_lam."""

    kind: str
    pen_val: float = 1.0
    shape: float | None = None

    def __post_init__(self):
        if self.kind not in _DEFAULT_SHAPE:
            raise InvalidInputError(f"unknown concave generator {self.kind!r}")
        if self.shape is None:
            object.__setattr__(self, "shape", _DEFAULT_SHAPE[self.kind])
        if self.kind == "scad" and not self.shape > 2:
            raise InvalidInputError("SCAD needs a > 2")
        if self.kind == "mcp" and not self.shape > 1:
            raise InvalidInputError("MCP needs gamma > 1")
        if not self.pen_val >= 0:
            raise InvalidInputError("pen_val must be nonnegative")

    def with_pen_val(self, pen_val):
        return replace(self, pen_val=float(pen_val))

    @property
    def scad_like_params(self):
        """(a1, b1) with ``x <= b1 * lam  =>  g'(x) >= a1 * lam``."""
        if self.kind == "scad":
            return 1.0, 1.0
        return 0.5, self.shape / 2.0


def _check_nonneg(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise InvalidInputError("concave generators are defined on x >= 0")
    return x


def concave_value(gen, x):
    x = _check_nonneg(x)
    lam, a = gen.pen_val, gen.shape
    if gen.kind == "scad":
        out = np.where(
            x <= lam, lam * x,
            np.where(x <= a * lam,
                     (2 * a * lam * x - x ** 2 - lam ** 2) / (2 * (a - 1)),
                     (a + 1) * lam ** 2 / 2))
    else:
        out = np.where(x <= a * lam, lam * x - x ** 2 / (2 * a), a * lam ** 2 / 2)
    return out if out.ndim else float(out)


def concave_derivative(gen, x):
    x = _check_nonneg(x)
    lam, a = gen.pen_val, gen.shape
    if gen.kind == "scad":
        out = np.where(x <= lam, lam, np.maximum(a * lam - x, 0.0) / (a - 1))
    else:
        out = np.maximum(lam - x / a, 0.0)
    out = out.astype(float)
    return out if out.ndim else float(out)
