"""Accelerated proximal gradient (FISTA) for penalized or constrained GLMs.

The smooth part is the loss (plus a generalized ridge, which is smooth) and
the non-smooth part enters only through its prox or projection. Momentum is
reset with the gradient restart test of O'Donoghue and Candes. When the loss
has no global Lipschitz gradient (poisson) the step size is found by
backtracking and the accepted step is reused as the next trial step.
"""
from dataclasses import dataclass, field

import numpy as np

from penglm.constraints import ConstraintSpec, project
from penglm.exceptions import DivergenceError, InvalidInputError, UnsupportedError
from penglm.losses import (
    check_response,
    coef_shape,
    intercept_at_zero,
    intercept_shape,
    lipschitz_constant,
    loss_value,
    pointwise,
    pointwise_deriv,
)
from penglm.penalties import PenaltySpec, penalty_value, prox


@dataclass
class SolverConfig:
    """FISTA settings.

    Parameters
    ----------
    max_iter : int
    rel_tol : float
        Tolerance on the relative change of the objective.
    resid_tol : float
        Tolerance on the prox-gradient fixed point residual, scaled by
        ``1 + ||coef||_max``. Both tests must pass to declare convergence.
    backtracking_shrink : float
        Step size multiplier in (0, 1) used by the line search.
    initial_step : float
        First trial step when the loss has no Lipschitz constant.
    restart_rule : {'gradient', 'none'}
    record_history : bool
        Keep per-iteration diagnostics in ``FitResult.history``.
    """

    max_iter: int = 2000
    rel_tol: float = 1e-8
    resid_tol: float = 1e-7
    backtracking_shrink: float = 0.5
    initial_step: float = 1.0
    restart_rule: str = "gradient"
    record_history: bool = False

    def __post_init__(self):
        if self.max_iter < 1 or not self.rel_tol > 0 or not self.resid_tol > 0:
            raise InvalidInputError("max_iter, rel_tol and resid_tol must be positive")
        if not 0 < self.backtracking_shrink < 1:
            raise InvalidInputError("backtracking_shrink must lie in (0, 1)")
        if not self.initial_step > 0:
            raise InvalidInputError("initial_step must be positive")
        if self.restart_rule not in ("gradient", "none"):
            raise InvalidInputError(f"unknown restart rule {self.restart_rule!r}")


@dataclass
class FitResult:
    coef: np.ndarray
    intercept: float | np.ndarray | None
    objective: float
    n_iter: int
    converged: bool
    split: list | None = None
    history: dict | None = None
    step: float | None = None


@dataclass
class TunePath:
    """Fits along a decreasing tuning grid plus selection bookkeeping."""

    grid: np.ndarray
    fits: list
    metrics: dict = field(default_factory=dict)
    selected_index: int | None = None
    selection_rule: str | None = None
    state: object = None
    info: dict = field(default_factory=dict)

    @property
    def selected(self):
        if self.selected_index is None:
            raise InvalidInputError("no tuning parameter has been selected")
        return self.fits[self.selected_index]

    @property
    def selected_pen_val(self):
        return float(self.grid[self.selected_index])


class _SmoothPart:
    """Loss as a function of the packed variable (b_1, ..., b_q, u)."""

    def __init__(self, loss, data, n_blocks=1, fit_intercept=True,
                 tikhonov=None, ridge_val=0.0):
        self.loss = loss
        self.data = data
        self.shape = coef_shape(loss, data)
        self.size = int(np.prod(self.shape))
        self.q = n_blocks
        self.fit_intercept = fit_intercept
        self.int_shape = intercept_shape(loss, data)
        self.n_int = int(np.prod(self.int_shape)) if fit_intercept else 0
        self.s = data.norm_weights() / data.n
        self.y = data.y
        z_shape = (data.n,) + self.shape[1:]
        off = np.zeros(z_shape)
        if data.offsets is not None:
            o = data.offsets
            off = off + (o[:, None] if (o.ndim == 1 and off.ndim == 2) else o)
        self.offset = off
        self.tikhonov = tikhonov
        self.ridge_val = ridge_val
        if tikhonov is not None:
            self.gram = tikhonov.T @ tikhonov

    def unpack(self, x):
        blocks = [x[i * self.size:(i + 1) * self.size].reshape(self.shape)
                  for i in range(self.q)]
        if not self.fit_intercept:
            return blocks, None
        u = x[self.q * self.size:]
        return blocks, (float(u[0]) if self.int_shape == () else u.copy())

    def pack(self, blocks, u):
        parts = [np.asarray(b, dtype=float).ravel() for b in blocks]
        if self.fit_intercept:
            parts.append(np.atleast_1d(np.asarray(u, dtype=float)).ravel())
        return np.concatenate(parts)

    def _beta(self, x):
        beta = x[:self.size]
        for i in range(1, self.q):
            beta = beta + x[i * self.size:(i + 1) * self.size]
        return beta.reshape(self.shape)

    def predict(self, x):
        z = self.data.X @ self._beta(x) + self.offset
        if self.fit_intercept:
            u = x[self.q * self.size:]
            z = z + (u[0] if self.int_shape == () else u)
        return z

    def value(self, z, x):
        with np.errstate(over="ignore", invalid="ignore"):
            val = self.s @ pointwise(self.loss, z, self.y)
        if self.tikhonov is not None:
            beta = self._beta(x)
            val += 0.5 * self.ridge_val * np.sum((self.tikhonov @ beta) ** 2)
        return float(val)

    def grad(self, z, x):
        G = pointwise_deriv(self.loss, z, self.y)
        G = self.s[:, None] * G if G.ndim == 2 else self.s * G
        gb = self.data.X.T @ G
        if self.tikhonov is not None:
            gb = gb + self.ridge_val * (self.gram @ self._beta(x))
        parts = [gb.ravel()] * self.q
        if self.fit_intercept:
            parts.append(np.atleast_1d(G.sum(axis=0)))
        return np.concatenate(parts)


def _run_fista(sm, prox_fn, pen_fn, x0, cfg, lipschitz, momentum=True):
    """Core loop shared by single-block and infimal-sum problems."""
    step = 1.0 / lipschitz if lipschitz else cfg.initial_step
    use_restart = momentum and cfg.restart_rule == "gradient"
    hist = {"objective": [], "step": [], "restart": [], "majorization_gap": [],
            "momentum": []} if cfg.record_history else None

    x = x0
    zx = sm.predict(x)
    F = sm.value(zx, x) + pen_fn(x)
    if not np.isfinite(F):
        raise DivergenceError("objective is not finite at the starting point")
    y, zy, fy = x, zx, sm.value(zx, x)
    t = 1.0
    used_momentum = False
    converged = False
    n_iter = 0

    for n_iter in range(1, cfg.max_iter + 1):
        g = sm.grad(zy, y)
        while True:
            x_new = prox_fn(y - step * g, step)
            z_new = sm.predict(x_new)
            f_new = sm.value(z_new, x_new)
            diff = x_new - y
            bound = fy + g @ diff + diff @ diff / (2 * step)
            tol = 1e-12 * max(1.0, abs(fy))
            if np.isfinite(f_new) and f_new <= bound + tol:
                break
            step *= cfg.backtracking_shrink
            if step < 1e-30:
                raise DivergenceError("line search step underflow")

        F_new = f_new + pen_fn(x_new)
        if not np.isfinite(F_new):
            raise DivergenceError("objective became non-finite")

        restart = use_restart and (y - x_new) @ (x_new - x) > 0
        if hist is not None:
            hist["objective"].append(F_new)
            hist["step"].append(step)
            hist["restart"].append(bool(restart))
            hist["majorization_gap"].append(f_new - bound)
            hist["momentum"].append(used_momentum)

        rel_change = abs(F - F_new) / max(1.0, abs(F_new))
        x_old, zx_old = x, zx
        x, zx, F = x_new, z_new, F_new

        if rel_change <= cfg.rel_tol:
            g_x = sm.grad(zx, x)
            resid = np.max(np.abs(x - prox_fn(x - step * g_x, step)), initial=0.0)
            blocks, _ = sm.unpack(x)
            scale = 1.0 + max(np.max(np.abs(b), initial=0.0) for b in blocks)
            if resid <= cfg.resid_tol * scale:
                converged = True
                break

        if momentum and not restart:
            t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            mom = (t - 1) / t_new
            y = x + mom * (x - x_old)
            zy = zx + mom * (zx - zx_old)
            fy = sm.value(zy, y)
            t = t_new
            used_momentum = mom != 0
        else:
            t = 1.0
            y, zy, fy = x, zx, f_new
            used_momentum = False
    return x, n_iter, converged, hist, step


def _start_point(sm, loss, data, warm_start, n_blocks):
    shape = sm.shape
    if warm_start is not None and warm_start.split is not None and len(warm_start.split) == n_blocks:
        blocks = [np.asarray(b, dtype=float).reshape(shape) for b in warm_start.split]
    elif warm_start is not None:
        blocks = [np.asarray(warm_start.coef, dtype=float).reshape(shape)]
        blocks += [np.zeros(shape) for _ in range(n_blocks - 1)]
    else:
        blocks = [np.zeros(shape) for _ in range(n_blocks)]
    u = None
    if sm.fit_intercept:
        if warm_start is not None and warm_start.intercept is not None:
            u = warm_start.intercept
        else:
            u = intercept_at_zero(loss, data)
    return sm.pack(blocks, u)


def _check_loss(loss, data):
    check_response(loss, data)
    if not loss.is_smooth:
        raise UnsupportedError(
            "the exact quantile loss is not smooth; set a positive smoothing bandwidth")


def _scaled_components(spec):
    return [c.with_pen_val(c.pen_val * spec.pen_val) for c in spec.components]


def fit(loss, pen_or_con, data, cfg=None, warm_start=None, fit_intercept=True):
    """Solve the penalized (or constrained) problem for one tuning value.

    Parameters
    ----------
    loss : LossSpec
    pen_or_con : PenaltySpec, ConstraintSpec or None
    data : Dataset
    cfg : SolverConfig, optional
    warm_start : FitResult, optional
        Starting point; defaults to ``coef = 0`` and the intercept that is
        optimal at ``coef = 0``.
    fit_intercept : bool

    Returns
    -------
    FitResult
    """
    cfg = cfg or SolverConfig()
    _check_loss(loss, data)
    if isinstance(pen_or_con, PenaltySpec) and pen_or_con.kind == "infimal_sum":
        return fit_infimal(loss, _scaled_components(pen_or_con), data, cfg,
                           warm_start=warm_start, fit_intercept=fit_intercept)

    tikhonov, ridge_val = None, 0.0
    momentum = True
    if pen_or_con is None:
        def prox_fn(v, step):
            return v

        def pen_fn(v):
            return 0.0
    elif isinstance(pen_or_con, ConstraintSpec):
        con = pen_or_con
        momentum = con.is_convex
        prox_fn = pen_fn = None
    elif isinstance(pen_or_con, PenaltySpec) and pen_or_con.kind == "generalized_ridge":
        tikhonov, ridge_val = pen_or_con.tikhonov, pen_or_con.pen_val

        def prox_fn(v, step):
            return v

        def pen_fn(v):
            return 0.0
    elif isinstance(pen_or_con, PenaltySpec):
        pen = pen_or_con
    else:
        raise InvalidInputError("pen_or_con must be a PenaltySpec, ConstraintSpec or None")

    sm = _SmoothPart(loss, data, 1, fit_intercept, tikhonov, ridge_val)
    nb = sm.size

    if isinstance(pen_or_con, ConstraintSpec):
        def prox_fn(v, step):
            out = v.copy()
            out[:nb] = project(con, v[:nb].reshape(sm.shape)).ravel()
            return out

        def pen_fn(v):
            return 0.0
    elif isinstance(pen_or_con, PenaltySpec) and tikhonov is None:
        def prox_fn(v, step):
            out = v.copy()
            out[:nb] = prox(pen, v[:nb].reshape(sm.shape), step).ravel()
            return out

        def pen_fn(v):
            return penalty_value(pen, v[:nb].reshape(sm.shape))

    L = lipschitz_constant(loss, data, fit_intercept)
    if L is not None and tikhonov is not None:
        L += ridge_val * np.linalg.norm(tikhonov, 2) ** 2

    x0 = _start_point(sm, loss, data, warm_start, 1)
    x, n_iter, converged, hist, step = _run_fista(sm, prox_fn, pen_fn, x0, cfg, L, momentum)
    (coef,), u = sm.unpack(x)
    obj = loss_value(loss, data, coef, u)
    if isinstance(pen_or_con, PenaltySpec):
        obj += penalty_value(pen_or_con, coef)
    return FitResult(coef=coef, intercept=u, objective=obj, n_iter=n_iter,
                     converged=converged, history=hist, step=step)


def fit_infimal(loss, components, data, cfg=None, warm_start=None, fit_intercept=True):
    """Infimal-sum penalty: minimize ``L(sum_j b_j) + sum_j pen_j(b_j)``.

    All blocks share the loss gradient evaluated at ``sum_j b_j``, so the
    stacked problem has Lipschitz constant ``q * L``; the prox is blockwise.
    The returned ``coef`` is the sum of the blocks and ``split`` holds them.
    """
    cfg = cfg or SolverConfig()
    _check_loss(loss, data)
    components = list(components)
    if not components:
        raise InvalidInputError("fit_infimal needs at least one component")
    q = len(components)
    sm = _SmoothPart(loss, data, q, fit_intercept)
    nb = sm.size

    def prox_fn(v, step):
        out = v.copy()
        for j, comp in enumerate(components):
            blk = slice(j * nb, (j + 1) * nb)
            out[blk] = prox(comp, v[blk].reshape(sm.shape), step).ravel()
        return out

    def pen_fn(v):
        return sum(penalty_value(comp, v[j * nb:(j + 1) * nb].reshape(sm.shape))
                   for j, comp in enumerate(components))

    L = lipschitz_constant(loss, data, fit_intercept)
    if L is not None:
        L *= q
    x0 = _start_point(sm, loss, data, warm_start, q)
    x, n_iter, converged, hist, step = _run_fista(sm, prox_fn, pen_fn, x0, cfg, L)
    blocks, u = sm.unpack(x)
    coef = np.sum(blocks, axis=0)
    obj = loss_value(loss, data, coef, u) + sum(
        penalty_value(c, b) for c, b in zip(components, blocks))
    return FitResult(coef=coef, intercept=u, objective=obj, n_iter=n_iter,
                     converged=converged, split=blocks, history=hist, step=step)


def check_grid(grid):
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise InvalidInputError("tuning grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
        raise InvalidInputError("tuning grid must be positive and strictly decreasing")
    return grid


def fit_path(loss, pen_template, data, grid, cfg=None, fit_intercept=True, warm_start=None):
    """Fit along a decreasing grid, warm starting each fit from the previous."""
    grid = check_grid(grid)
    fits = []
    prev = warm_start
    for lam in grid:
        res = fit(loss, pen_template.with_pen_val(lam), data, cfg,
                  warm_start=prev, fit_intercept=fit_intercept)
        fits.append(res)
        prev = res
    return TunePath(grid=grid, fits=fits)
