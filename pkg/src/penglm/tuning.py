"""Tuning grids from killer lower bounds, cross-validation and information criteria."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from penglm.data import standardize, unstandardize_coef
from penglm.exceptions import InvalidInputError, UnsupportedError
from penglm.losses import (
    coef_shape,
    intercept_at_zero,
    loss_gradient,
    loss_value,
    n_classes,
    pointwise_deriv,
    pointwise_second,
)
from penglm.penalties import group_weights, soft_threshold
from penglm.solver import TunePath, check_grid, fit_path

KLB_KINDS = ("lasso", "group_lasso", "multi_task_lasso", "nuclear_norm")


@dataclass
class GridSpec:
    n_points: int = 100
    eps: float = 1e-3
    spacing: str = "log"
    user_grid: np.ndarray | None = None

    def __post_init__(self):
        if self.n_points < 1:
            raise InvalidInputError("n_points must be at least 1")
        if not 0 < self.eps < 1:
            raise InvalidInputError("eps must lie in (0, 1)")
        if self.spacing != "log":
            raise InvalidInputError("only log spacing is supported")


@dataclass
class SelectionCriterion:
    """Information criterion ``2 n L + factor * df``.

    EBIC charges an extra ``2 * ebic_gamma * log(d)`` per selected variable.
    """

    kind: str
    ebic_gamma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("cv_min", "cv_1se", "aic", "bic", "ebic"):
            raise InvalidInputError(f"unknown criterion {self.kind!r}")
        if not 0 <= self.ebic_gamma <= 1:
            raise InvalidInputError("ebic_gamma must lie in [0, 1]")

    def factor(self, n, d):
        if self.kind == "aic":
            return 2.0
        if self.kind == "bic":
            return float(np.log(n))
        if self.kind == "ebic":
            return float(np.log(n) + 2 * self.ebic_gamma * np.log(d))
        raise InvalidInputError(f"{self.kind} is not an information criterion")


# ---------------------------------------------------------------------------
# killer lower bounds

def _null_gradient(loss, data, fit_intercept):
    shape = coef_shape(loss, data)
    u0 = intercept_at_zero(loss, data) if fit_intercept else None
    g0, _ = loss_gradient(loss, data, np.zeros(shape), u0)
    return g0


def _positive(w, what):
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise InvalidInputError(
            f"{what} weights must be strictly positive; with zero weights the "
            "bound is no longer exact")
    return w


def klb_from_gradient(g0, pen_kind, weights=None, groups=None):
    """Killer lower bound given the loss gradient at (0, u0)."""
    if pen_kind == "lasso":
        w = np.ones(g0.shape) if weights is None else _positive(weights, "lasso")
        if w.ndim == 1 and g0.ndim == 2 and w.shape[0] == g0.shape[0]:
            w = w[:, None]
        return float(np.max(np.abs(g0) / w))
    if pen_kind == "group_lasso":
        if not groups:
            raise InvalidInputError("group_lasso needs groups")
        groups = [np.asarray(g, dtype=int).ravel() for g in groups]
        covered = np.concatenate(groups)
        if np.unique(covered).size != g0.size:
            raise InvalidInputError(
                "every coordinate must belong to a group; ungrouped ones are never killed")
        w = np.sqrt([len(g) for g in groups]) if weights is None else _positive(weights, "group")
        return float(max(np.linalg.norm(g0[g]) / wg for g, wg in zip(groups, w)))
    if pen_kind == "multi_task_lasso":
        if g0.ndim != 2:
            raise InvalidInputError("multi_task_lasso needs a matrix coefficient")
        w = np.ones(g0.shape[0]) if weights is None else _positive(weights, "row")
        return float(np.max(np.linalg.norm(g0, axis=1) / w))
    if pen_kind == "nuclear_norm":
        if g0.ndim != 2:
            raise InvalidInputError("nuclear_norm needs a matrix coefficient")
        sv = np.linalg.svd(g0, compute_uv=False)
        w = np.ones(sv.size) if weights is None else _positive(weights, "singular value")
        return float(np.max(sv / w))
    raise UnsupportedError(f"no killer lower bound for {pen_kind}")


def klb(loss, pen_kind, data, weights=None, groups=None, fit_intercept=True):
    """Smallest lambda at which (0, u0) satisfies the optimality conditions.

    Parameters
    ----------
    loss : LossSpec
    pen_kind : {'lasso', 'group_lasso', 'multi_task_lasso', 'nuclear_norm'}
    data : Dataset
    weights : array-like, optional
        Strictly positive penalty weights (entries, groups, rows or
        singular values).
    groups : list of index arrays, optional
    fit_intercept : bool

    Returns
    -------
    float
    """
    g0 = _null_gradient(loss, data, fit_intercept)
    return klb_from_gradient(g0, pen_kind, weights, groups)


def _sgl_group_bound(g, alpha, wg):
    """Smallest lam with ||soft(g, lam alpha)|| <= lam (1 - alpha) wg."""
    gmax = np.max(np.abs(g), initial=0.0)
    if gmax == 0:
        return 0.0
    if (1 - alpha) * wg == 0:
        return gmax / alpha

    def excess(lam):
        return np.linalg.norm(soft_threshold(g, lam * alpha)) - lam * (1 - alpha) * wg

    # excess decreases from ||g|| at 0 and is nonpositive at hi
    hi = np.linalg.norm(g) / ((1 - alpha) * wg)
    if alpha > 0:
        hi = min(hi, gmax / alpha)
    if excess(hi) >= 0:
        return hi
    return brentq(excess, 0.0, hi, xtol=1e-15, rtol=1e-15)


def lambda_max(loss, pen, data, fit_intercept=True, eps_norm=1e-3):
    """Top of the tuning grid for a penalty template.

    Returns
    -------
    lmax : float
    exact : bool
        False when the value is only a conservative cap. tv1 falls back to
        the lasso bound because constant shifts are never penalized, and
        the sparse fused lasso ignores the help of its fusion term.
    """
    kind = pen.kind
    if kind in KLB_KINDS:
        return klb(loss, kind, data, pen.weights, pen.groups, fit_intercept), True
    if kind in ("ridge", "generalized_ridge") or (kind == "elastic_net" and pen.mix == 0):
        if kind == "generalized_ridge":
            raise UnsupportedError("no lambda_max rule for the generalized ridge")
        if loss.kind == "least_squares" and data.y.ndim == 1:
            return ridge_lambda_max(data, eps_norm, weights=pen.weights,
                                    fit_intercept=fit_intercept), True
        return newton_lambda_max(loss, data, eps_norm, weights=pen.weights,
                                 fit_intercept=fit_intercept), True
    g0 = _null_gradient(loss, data, fit_intercept)
    if kind == "elastic_net":
        return klb_from_gradient(g0, "lasso", pen.weights) / pen.mix, True
    if kind == "sparse_group_lasso":
        a = pen.mix
        w = group_weights(pen)
        covered = np.zeros(g0.size, dtype=bool)
        best = 0.0
        for g, wg in zip(pen.groups, w):
            covered[g] = True
            best = max(best, _sgl_group_bound(g0[g], a, wg))
        if np.any(~covered):
            if a == 0:
                raise InvalidInputError("ungrouped coordinates are unpenalized when mix = 0")
            best = max(best, np.max(np.abs(g0[~covered])) / a)
        return float(best), True
    if kind == "sparse_fused_lasso":
        # the fused part can kill earlier, so klb / mix is only a cap
        if pen.mix == 0:
            return klb_from_gradient(g0, "lasso"), False
        return klb_from_gradient(g0, "lasso") / pen.mix, False
    if kind == "tv1":
        return klb_from_gradient(g0, "lasso"), False
    if kind == "infimal_sum":
        vals = []
        for c in pen.components:
            if c.pen_val <= 0:
                raise InvalidInputError("infimal components need positive pen_val")
            lm, ex = lambda_max(loss, c, data, fit_intercept, eps_norm)
            vals.append((lm / c.pen_val, ex))
        return max(v for v, _ in vals), all(e for _, e in vals)
    raise UnsupportedError(f"no lambda_max rule for {kind}")


# ---------------------------------------------------------------------------
# ridge bounds

def _ridge_norm_sq(lam, mu, q, n):
    return float(np.sum((q / (mu + n * lam)) ** 2))


def _ridge_lambda_from_gram(A, b, n, target, method, k):
    """lambda with ||(A + n lam I)^{-1} b|| <= target, A symmetric PSD."""
    mu, V = np.linalg.eigh(A)
    mu = np.clip(mu, 0.0, None)[::-1]
    q = (V.T @ b)[::-1]
    b_norm = np.linalg.norm(b)
    mu_max = mu[0] if mu.size else 0.0
    mu_min = mu[-1] if mu.size and mu[-1] > 1e-12 * mu_max else 0.0

    op_lam = (b_norm / target - mu_min) / n
    if op_lam <= 0:
        op_lam = mu_min / n
    if method == "op_norm":
        return op_lam

    if method == "svd_exact":
        head_mu, head_q, tail = mu, q, 0.0
    elif method == "svd_topk":
        if k is None or k < 1:
            raise InvalidInputError("svd_topk needs k >= 1")
        k = min(k, mu.size)
        head_mu, head_q = mu[:k], q[:k]
        # each remaining term is at most q_j^2 / (n lam)^2
        tail = max(b_norm ** 2 - float(head_q @ head_q), 0.0)
    else:
        raise InvalidInputError(f"unknown ridge bound method {method!r}")

    def f(lam):
        return _ridge_norm_sq(lam, head_mu, head_q, n) + tail / (n * lam) ** 2 - target ** 2

    singular = tail > 0 or np.any((head_mu == 0) & (head_q != 0))
    if not singular and np.sum((head_q / np.where(head_mu > 0, head_mu, 1.0)) ** 2) <= target ** 2:
        # the bound holds for every lambda > 0
        return op_lam if op_lam > 0 else max(mu_max, 1.0) / n
    # ||b|| / (n hi) <= target, so f(hi) <= 0
    hi = b_norm / (target * n)
    lo = hi / 2
    while f(lo) <= 0:
        lo /= 2
    return brentq(f, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)


def _weighted_center(M, s):
    return M - s @ M / s.sum()


def ridge_lambda_max(data, eps_norm, method="svd_exact", weights=None,
                     fit_intercept=True, k=None):
    """Smallest lambda for which the ridge coefficient norm is at most eps_norm.

    The ridge problem is ``(1/2n) sum_i s_i (y_i - u - x_i^T b)^2 +
    (lam/2) sum_j w_j b_j^2``. Sample weights scale rows by sqrt(s),
    penalty weights rescale columns by w^(-1/2) and the target shrinks to
    ``eps_norm * sqrt(min(w))``.

    Parameters
    ----------
    data : Dataset
    eps_norm : float
    method : {'svd_exact', 'svd_topk', 'op_norm'}
        ``svd_exact`` solves ``||b_lam|| = eps_norm``; ``svd_topk`` inverts an
        upper bound that uses the leading k singular values and the energy
        of ``X^T y`` outside them; ``op_norm`` uses the smallest singular
        value only.
    weights : array-like, optional
    fit_intercept : bool
    k : int, optional
    """
    if not eps_norm > 0:
        raise InvalidInputError("eps_norm must be positive")
    if data.y.ndim != 1:
        raise UnsupportedError("ridge_lambda_max needs a single response")
    s = data.norm_weights()
    X, y = data.X, data.y
    if data.offsets is not None:
        y = y - data.offsets
    if fit_intercept:
        X, y = _weighted_center(X, s), y - s @ y / s.sum()
    target = eps_norm
    rs = np.sqrt(s)
    Xt = rs[:, None] * X
    if weights is not None:
        w = _positive(weights, "ridge")
        Xt = Xt / np.sqrt(w)
        target = eps_norm * np.sqrt(w.min())
    b = Xt.T @ (rs * y)
    return _ridge_lambda_from_gram(Xt.T @ Xt, b, data.n, target, method, k)


def newton_terms(loss, data, fit_intercept=True):
    """Per-sample (g, h, u0): loss derivatives at the null model."""
    if data.y.ndim != 1 or loss.kind == "multinomial":
        raise UnsupportedError("Newton heuristic needs a scalar response")
    u0 = intercept_at_zero(loss, data) if fit_intercept else 0.0
    z = np.full(data.n, float(u0))
    if data.offsets is not None:
        z = z + data.offsets
    g = pointwise_deriv(loss, z, data.y)
    h = pointwise_second(loss, z, data.y)
    return g, h, u0


def newton_lambda_max(loss, data, eps_norm, method="svd_exact", weights=None,
                      fit_intercept=True, k=None):
    """Lambda whose single ridge-penalized Newton step from (0, u0) is small.

    The step solves ``(X^T S H X / n + lam W) b = -X^T S g / n`` with the
    intercept profiled out (X centered with weights s h), which is a ridge
    problem on ``(H^(1/2) X, -H^(-1/2) g)``. Samples with h = 0 contribute
    to the right-hand side only, so the bound is formed from the Gram matrix.
    """
    if not eps_norm > 0:
        raise InvalidInputError("eps_norm must be positive")
    if not loss.is_smooth or loss.kind == "quantile" and loss.smoothing == 0:
        raise UnsupportedError("Newton heuristic needs a twice differentiable loss")
    g, h, _ = newton_terms(loss, data, fit_intercept)
    if np.any(h < 0):
        raise InvalidInputError("negative curvature at the null model")
    s = data.norm_weights()
    sh = s * h
    X = data.X
    if fit_intercept:
        if sh.sum() <= 0:
            raise InvalidInputError("zero curvature at the null model")
        X = X - sh @ X / sh.sum()
    target = eps_norm
    if weights is not None:
        w = _positive(weights, "ridge")
        X = X / np.sqrt(w)
        target = eps_norm * np.sqrt(w.min())
    A = X.T @ (sh[:, None] * X)
    b = -X.T @ (s * g)
    return _ridge_lambda_from_gram(A, b, data.n, target, method, k)


def make_grid(lmax, spec=None):
    """Descending log-spaced grid on [eps * lmax, lmax] with exact endpoints."""
    spec = spec or GridSpec()
    if spec.user_grid is not None:
        return check_grid(spec.user_grid)
    if not (np.isfinite(lmax) and lmax > 0):
        raise InvalidInputError("lmax must be positive and finite")
    if spec.n_points == 1:
        return np.array([float(lmax)])
    grid = np.geomspace(lmax, spec.eps * lmax, spec.n_points)
    grid[0], grid[-1] = lmax, spec.eps * lmax
    return grid


# ---------------------------------------------------------------------------
# cross-validation

def fold_indices(n, k, seed):
    """Shuffled fold assignment; each entry holds the held-out indices."""
    if k < 2 or n < k:
        raise InvalidInputError("cross-validation needs 2 <= k <= n")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def _check_classes(loss, train, K):
    if loss.kind == "logistic" and np.unique(train.y).size < 2:
        raise InvalidInputError("a training fold contains a single class")
    if loss.kind == "multinomial" and np.unique(train.y).size < K:
        raise InvalidInputError("a training fold is missing a class")


def _default_metric(loss, data, coef, intercept):
    return loss_value(loss, data, coef, intercept)


def cross_validate(loss, pen_template, data, grid, k=5, seed=0, metric=None, rule="1se",
                   cfg=None, standardize_folds=True, fit_intercept=True, path_fn=None,
                   n_jobs=1):
    """K-fold cross-validation over a tuning grid, then a full-data path.

    Each training fold is standardized on its own rows, fitted along the
    grid and mapped back to the scale of ``data`` before scoring the
    held-out rows. The returned path is fitted on ``data`` as given, so
    callers usually pass already standardized data.

    Parameters
    ----------
    loss : LossSpec
    pen_template : PenaltySpec
        Ignored when ``path_fn`` is given.
    data : Dataset
    grid : array-like, strictly decreasing
    k, seed : int
    metric : callable, optional
        ``metric(loss, test_data, coef, intercept) -> float``; defaults to
        the held-out average loss.
    rule : {'min', '1se'}
    cfg : SolverConfig, optional
    standardize_folds, fit_intercept : bool
    path_fn : callable, optional
        ``path_fn(train_data, grid) -> list of FitResult`` replacing the
        default warm-started path (used for adaptive and LLA estimators).
    n_jobs : int
        Folds run on a thread pool; results are merged in fold order.

    Returns
    -------
    TunePath
        ``metrics`` holds ``cv_mean``, ``cv_se`` and the ``cv_folds`` table.
    """
    if rule not in ("min", "1se"):
        raise InvalidInputError(f"unknown cv rule {rule!r}")
    grid = check_grid(grid)
    metric = metric or _default_metric
    if loss.kind == "multinomial" and loss.class_count is None:
        loss = replace(loss, class_count=n_classes(loss, data))
    K = n_classes(loss, data) if loss.kind == "multinomial" else None
    if path_fn is None:
        def path_fn(train, g):
            return fit_path(loss, pen_template, train, g, cfg, fit_intercept).fits

    folds = fold_indices(data.n, k, seed)
    for test_idx in folds:
        _check_classes(loss, data.subset(np.setdiff1d(np.arange(data.n), test_idx)), K)

    def run_fold(test_idx):
        train_idx = np.setdiff1d(np.arange(data.n), test_idx)
        train, test = data.subset(train_idx), data.subset(test_idx)
        if standardize_folds:
            train_std, state = standardize(train, center=fit_intercept)
        else:
            train_std, state = train, None
        out = np.empty(grid.size)
        for j, res in enumerate(path_fn(train_std, grid)):
            coef, inter = res.coef, res.intercept
            if state is not None:
                coef, inter = unstandardize_coef(coef, inter, state)
            out[j] = metric(loss, test, coef, inter)
        return out

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            table = np.array(list(pool.map(run_fold, folds)))
    else:
        table = np.array([run_fold(f) for f in folds])

    mean = table.mean(axis=0)
    se = table.std(axis=0, ddof=1) / np.sqrt(k)
    i_min = int(np.argmin(mean))
    i_1se = int(np.nonzero(mean <= mean[i_min] + se[i_min])[0][0])
    fits = path_fn(data, grid)
    return TunePath(
        grid=grid, fits=list(fits),
        metrics={"cv_mean": mean, "cv_se": se, "cv_folds": table},
        selected_index=i_min if rule == "min" else i_1se,
        selection_rule=f"cv_{rule}",
        info={"folds": folds, "min_index": i_min, "1se_index": i_1se, "seed": seed},
    )


# ---------------------------------------------------------------------------
# information criteria and noise variance

def support_size(coef, tol=0.0):
    return int(np.count_nonzero(np.abs(np.asarray(coef)) > tol))


def degrees_of_freedom(coef, pen_kind="lasso", groups=None, intercept=None):
    """Support-size degrees of freedom.

    Entrywise penalties count nonzero coefficients; group, row and nuclear
    penalties count nonzero groups, rows or singular values; tv1 counts
    constant segments. One more per intercept entry.
    """
    coef = np.asarray(coef, dtype=float)
    if pen_kind == "group_lasso":
        df = sum(np.any(coef[np.asarray(g)] != 0) for g in groups)
    elif pen_kind == "multi_task_lasso":
        df = int(np.count_nonzero(np.any(coef != 0, axis=1)))
    elif pen_kind == "nuclear_norm":
        sv = np.linalg.svd(coef, compute_uv=False)
        df = int(np.count_nonzero(sv > 1e-10 * max(1.0, np.max(sv, initial=0.0))))
    elif pen_kind == "tv1":
        df = int(np.count_nonzero(np.diff(coef))) + 1
    else:
        df = support_size(coef)
    if intercept is not None:
        df += int(np.size(intercept))
    return int(df)


def _rss(data, coef, intercept):
    z = data.X @ coef
    if intercept is not None:
        z = z + intercept
    if data.offsets is not None:
        z = z + data.offsets
    return float(data.norm_weights() @ (data.y - z) ** 2)


def select_by_ic(path, crit, loss, data, sigma2=None, plugin=True, pen_kind="lasso",
                 groups=None):
    """Select the grid value minimizing ``2 n L + factor * df``.

    For least squares L is the Gaussian negative log-likelihood with
    variance ``sigma2`` or, when it is None and ``plugin`` is set, the
    per-lambda plug-in ``RSS / n``. Other losses use the average loss.
    Ties go to the larger lambda.

    Returns
    -------
    TunePath
        A copy of ``path`` with ``ic_score``, ``df`` and ``nll2n`` metrics.
    """
    if isinstance(crit, str):
        crit = SelectionCriterion(crit)
    n, d = data.n, data.d
    factor = crit.factor(n, d)
    gaussian = loss.kind == "least_squares" and data.y.ndim == 1
    if gaussian and sigma2 is None and not plugin:
        raise InvalidInputError("sigma2 is required when the plug-in estimate is disabled")
    if sigma2 is not None and not sigma2 > 0:
        raise InvalidInputError("sigma2 must be positive")

    m = len(path.fits)
    nll2n, dfs = np.empty(m), np.empty(m)
    for j, res in enumerate(path.fits):
        if gaussian:
            rss = _rss(data, res.coef, res.intercept)
            s2 = sigma2 if sigma2 is not None else max(rss / n, np.finfo(float).tiny)
            nll2n[j] = n * np.log(2 * np.pi * s2) + rss / s2
        else:
            nll2n[j] = 2 * n * loss_value(loss, data, res.coef, res.intercept)
        dfs[j] = degrees_of_freedom(res.coef, pen_kind, groups, res.intercept)

    score = nll2n + factor * dfs
    metrics = dict(path.metrics, ic_score=score, df=dfs, nll2n=nll2n)
    return replace(path, metrics=metrics, selected_index=int(np.argmin(score)),
                   selection_rule=crit.kind)


def noise_variance(fit_or_path, data, method="reid"):
    """Noise variance estimate for least squares fits.

    ``reid``: ``RSS / (n - |support|)`` at a single fit (the selected fit
    of a TunePath). ``plugin``: ``RSS / n``, one value per grid point when
    given a path.
    """
    if data.y.ndim != 1:
        raise UnsupportedError("noise variance needs a single response")
    n = data.n
    if method == "reid":
        res = fit_or_path.selected if isinstance(fit_or_path, TunePath) else fit_or_path
        size = support_size(res.coef)
        if size >= n:
            raise InvalidInputError("support size must be smaller than n")
        return _rss(data, res.coef, res.intercept) / (n - size)
    if method == "plugin":
        if isinstance(fit_or_path, TunePath):
            return np.array([_rss(data, r.coef, r.intercept) / n for r in fit_or_path.fits])
        return _rss(data, fit_or_path.coef, fit_or_path.intercept) / n
    raise InvalidInputError(f"unknown noise variance method {method!r}")
