"""GLM and M-estimator losses.

Every loss is evaluated as the (sample weighted) average of a per-sample
loss ``l(z_i, y_i)`` of the linear predictor ``z_i = o_i + x_i^T beta + u``.
Multiple response data sum the one dimensional loss over response columns.
"""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, log_expit, logsumexp, softmax

from penglm.exceptions import (
    DomainError,
    InvalidInputError,
    UnboundedInterceptError,
)

LOSS_KINDS = (
    "least_squares",
    "logistic",
    "multinomial",
    "poisson",
    "huber",
    "quantile",
    "squared_hinge",
)

# bound on |d^2 l / dz^2|, used for the Lipschitz constant of the gradient
_CURVATURE = {
    "least_squares": 1.0,
    "logistic": 0.25,
    "multinomial": 0.5,
    "huber": 1.0,
    "squared_hinge": 2.0,
}

_LOGISTIC_CLIP = 1e-10


@dataclass(frozen=True)
class LossSpec:
    """Loss kind and its shape parameters.

    Parameters
    ----------
    kind : str
        One of ``LOSS_KINDS``.
    knot : float
        Huber knot.
    quantile : float
        Quantile level in (0, 1).
    class_count : int, optional
        Number of classes for the multinomial loss; inferred from the labels
        when omitted.
    smoothing : float
        Bandwidth of the Moreau-envelope smoothed quantile loss; 0 keeps the
        exact (non-smooth) check loss.
    """

    kind: str = "least_squares"
    knot: float = 1.0
    quantile: float = 0.5
    class_count: int | None = None
    smoothing: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidInputError(f"unknown loss {self.kind!r}")
        if not self.knot > 0:
            raise InvalidInputError("huber knot must be positive")
        if not 0 < self.quantile < 1:
            raise InvalidInputError("quantile level must lie in (0, 1)")
        if self.class_count is not None and self.class_count < 2:
            raise InvalidInputError("multinomial needs at least two classes")
        if not self.smoothing >= 0:
            raise InvalidInputError("quantile smoothing must be nonnegative")

    @property
    def is_smooth(self):
        return self.kind != "quantile" or self.smoothing > 0


def n_classes(spec, data):
    if spec.class_count is not None:
        return spec.class_count
    return int(data.y.max()) + 1


def coef_shape(spec, data):
    """Shape of the coefficient for this loss and dataset."""
    if spec.kind == "multinomial":
        return (data.d, n_classes(spec, data))
    if data.y.ndim == 2:
        return (data.d, data.y.shape[1])
    return (data.d,)


def intercept_shape(spec, data):
    shape = coef_shape(spec, data)
    return () if len(shape) == 1 else (shape[1],)


def check_response(spec, data):
    """Raise DomainError if y is outside the support of the loss."""
    y = data.y
    kind = spec.kind
    if kind == "logistic":
        if not np.all((y == 0) | (y == 1)):
            raise DomainError("logistic loss needs y in {0, 1}")
    elif kind == "multinomial":
        K = n_classes(spec, data)
        if y.ndim != 1 or not np.all((y == np.round(y)) & (y >= 0) & (y < K)):
            raise DomainError(f"multinomial loss needs integer labels in 0..{K - 1}")
    elif kind == "poisson":
        if np.any(y < 0):
            raise DomainError("poisson loss needs y >= 0")
    elif kind == "squared_hinge":
        if not np.all((y == -1) | (y == 1)):
            raise DomainError("squared hinge loss needs y in {-1, 1}")


def _one_hot(y, K):
    out = np.zeros((y.shape[0], K))
    out[np.arange(y.shape[0]), y.astype(int)] = 1.0
    return out


def pointwise(spec, z, y):
    """Per-sample losses; rows are summed over response columns."""
    kind = spec.kind
    if kind == "least_squares":
        vals = 0.5 * (y - z) ** 2
    elif kind == "logistic":
        # log(1 + e^z) - y z, written to stay finite for large |z|
        vals = -log_expit(z) + (1 - y) * z
    elif kind == "multinomial":
        return logsumexp(z, axis=1) - z[np.arange(z.shape[0]), y.astype(int)]
    elif kind == "poisson":
        with np.errstate(over="ignore"):
            vals = np.exp(z) - z * y
    elif kind == "huber":
        r = np.abs(y - z)
        d = spec.knot
        vals = np.where(r <= d, 0.5 * r ** 2, d * (r - 0.5 * d))
    elif kind == "quantile":
        r = y - z
        q = spec.quantile
        h = spec.smoothing
        if h == 0:
            vals = r * (q - (r < 0))
        else:
            vals = np.where(
                r > q * h, q * r - 0.5 * q ** 2 * h,
                np.where(r < -(1 - q) * h, (q - 1) * r - 0.5 * (1 - q) ** 2 * h,
                         0.5 * r ** 2 / h))
    elif kind == "squared_hinge":
        vals = np.maximum(0.0, 1 - y * z) ** 2
    else:  # pragma: no cover
        raise InvalidInputError(kind)
    if vals.ndim == 2:
        vals = vals.sum(axis=1)
    return vals


def pointwise_deriv(spec, z, y):
    """d l(z, y) / dz, same shape as z."""
    kind = spec.kind
    if kind == "least_squares":
        return z - y
    if kind == "logistic":
        return expit(z) - y
    if kind == "multinomial":
        return softmax(z, axis=1) - _one_hot(y, z.shape[1])
    if kind == "poisson":
        with np.errstate(over="ignore"):
            return np.exp(z) - y
    if kind == "huber":
        return -np.clip(y - z, -spec.knot, spec.knot)
    if kind == "quantile":
        r = y - z
        q = spec.quantile
        h = spec.smoothing
        if h == 0:
            # subgradient selection, 0 at r == 0
            return np.where(r > 0, -q, np.where(r < 0, 1 - q, 0.0))
        return -np.clip(r / h, q - 1, q)
    if kind == "squared_hinge":
        return -2 * y * np.maximum(0.0, 1 - y * z)
    raise InvalidInputError(kind)  # pragma: no cover


def pointwise_second(spec, z, y):
    """d^2 l(z, y) / dz^2 for the scalar losses."""
    kind = spec.kind
    if kind == "least_squares":
        return np.ones_like(z)
    if kind == "logistic":
        p = expit(z)
        return p * (1 - p)
    if kind == "poisson":
        return np.exp(z)
    if kind == "huber":
        return (np.abs(y - z) <= spec.knot).astype(float)
    if kind == "quantile" and spec.smoothing > 0:
        q, h = spec.quantile, spec.smoothing
        r = y - z
        return ((r <= q * h) & (r >= -(1 - q) * h)) / h
    if kind == "squared_hinge":
        return 2.0 * (y * z < 1)
    raise InvalidInputError(f"{kind} loss has no usable second derivative")


def linear_predictor(data, beta, inter=None):
    z = data.X @ beta
    if inter is not None:
        z = z + inter
    if data.offsets is not None:
        o = data.offsets
        z = z + (o[:, None] if (o.ndim == 1 and z.ndim == 2) else o)
    return z


def loss_value(spec, data, beta, inter=None):
    """Average loss ``(1/n) sum_i s_i l(o_i + x_i^T beta + u, y_i)``.

    Sample weights are normalized to sum to n.
    """
    check_response(spec, data)
    beta = np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(beta)) or (inter is not None and not np.all(np.isfinite(inter))):
        raise InvalidInputError("coefficients must be finite")
    z = linear_predictor(data, beta, inter)
    s = data.norm_weights()
    return float(s @ pointwise(spec, z, data.y) / data.n)


def loss_gradient(spec, data, beta, inter=None):
    """Gradient of loss_value in (beta, u).

    Returns
    -------
    grad_beta : ndarray, same shape as beta
    grad_inter : float, ndarray or None
        None when ``inter`` is None (no intercept in the model).
    """
    check_response(spec, data)
    beta = np.asarray(beta, dtype=float)
    z = linear_predictor(data, beta, inter)
    G = pointwise_deriv(spec, z, data.y)
    s = data.norm_weights() / data.n
    G = s[:, None] * G if G.ndim == 2 else s * G
    grad_beta = data.X.T @ G
    if inter is None:
        return grad_beta, None
    grad_inter = G.sum(axis=0)
    if np.ndim(grad_inter) == 0:
        grad_inter = float(grad_inter)
    return grad_beta, grad_inter


def lipschitz_constant(spec, data, fit_intercept=True):
    """Lipschitz constant of the loss gradient, or None if there is none.

    Poisson and the exact quantile loss return None; the solver then falls
    back to a backtracking line search.
    """
    if spec.kind == "quantile":
        if spec.smoothing == 0:
            return None
        curv = 1.0 / spec.smoothing
    elif spec.kind == "poisson":
        return None
    else:
        curv = _CURVATURE[spec.kind]
    X = data.X
    if fit_intercept:
        X = np.column_stack([X, np.ones(data.n)])
    X = np.sqrt(data.norm_weights())[:, None] * X
    smax = np.linalg.norm(X, 2)
    return curv * smax ** 2 / data.n


def _weighted_quantile(v, w, q):
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    cw = np.cumsum(w)
    idx = np.searchsorted(cw, q * cw[-1] - 1e-12 * cw[-1])
    return float(v[min(idx, len(v) - 1)])


def _root_1d(deriv, center, width):
    """Root of a nondecreasing scalar function, expanding the bracket."""
    lo, hi = center - width, center + width
    for _ in range(200):
        if deriv(lo) <= 0:
            break
        lo -= 2 * (hi - lo)
    for _ in range(200):
        if deriv(hi) >= 0:
            break
        hi += 2 * (hi - lo)
    flo, fhi = deriv(lo), deriv(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if flo > 0 or fhi < 0:
        raise UnboundedInterceptError("could not bracket the intercept")
    return brentq(deriv, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def _intercept_1d(spec, y, o, s):
    """Minimizer of u -> sum_i s_i l(o_i + u, y_i) for one response column."""
    kind = spec.kind
    sw = s.sum()
    if kind == "least_squares":
        return float(s @ (y - o) / sw)
    if kind == "logistic":
        pos = s @ y / sw
        if pos <= 0 or pos >= 1:
            raise UnboundedInterceptError(
                "logistic intercept is unbounded: all responses are in one class")
        if not np.any(o):
            p = np.clip(pos, _LOGISTIC_CLIP, 1 - _LOGISTIC_CLIP)
            return float(np.log(p / (1 - p)))
    if kind == "poisson":
        if s @ y <= 0:
            raise UnboundedInterceptError("poisson intercept is unbounded: all y are 0")
        return float(np.log(s @ y) - np.log(s @ np.exp(o)))
    if kind == "quantile" and spec.smoothing == 0:
        return _weighted_quantile(y - o, s, spec.quantile)

    def deriv(u):
        return float(s @ pointwise_deriv(spec, o + u, y))

    r = y - o
    center = float(np.median(r))
    width = float(np.ptp(r)) + 1.0
    return float(_root_1d(deriv, center, width))


def _multinomial_intercept(y, o, s, K):
    counts = np.bincount(y.astype(int), weights=s, minlength=K) / s.sum()
    u = np.log(np.clip(counts, _LOGISTIC_CLIP, None))
    u -= u.mean()
    if o is None:
        return u
    target = counts
    for _ in range(100):
        P = softmax(o + u, axis=1)
        grad = s @ P / s.sum() - target
        if np.max(np.abs(grad)) < 1e-14:
            break
        H = (P * s[:, None]).T @ P
        H = np.diag(s @ P) - H
        u = u - np.linalg.pinv(H / s.sum()) @ grad
    return u - u.mean()


def intercept_at_zero(spec, data):
    """Minimizer over u of the loss at beta = 0.

    Closed forms are used where available (weighted mean, logit and log of
    the mean, weighted quantile, class log-proportions); otherwise a scalar
    root search on the derivative.
    """
    check_response(spec, data)
    s = data.norm_weights()
    if spec.kind == "multinomial":
        K = n_classes(spec, data)
        o = data.offsets
        if o is not None and o.ndim == 1:
            o = np.repeat(o[:, None], K, axis=1)
        return _multinomial_intercept(data.y, o, s, K)
    if data.y.ndim == 1:
        o = data.offsets if data.offsets is not None else np.zeros(data.n)
        return _intercept_1d(spec, data.y, o, s)
    K = data.y.shape[1]
    out = np.empty(K)
    for k in range(K):
        if data.offsets is None:
            o = np.zeros(data.n)
        elif data.offsets.ndim == 1:
            o = data.offsets
        else:
            o = data.offsets[:, k]
        out[k] = _intercept_1d(spec, data.y[:, k], o, s)
    return out
