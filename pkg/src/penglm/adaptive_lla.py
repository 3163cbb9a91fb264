"""Adaptive weights and the local linear approximation (LLA) algorithm.

Both estimators reweight a convex structured penalty ``sum_j w_j t_j(beta)``
where ``t`` maps the coefficient to nonnegative magnitudes (entries, group
norms, row norms, singular values or first differences).
"""
from dataclasses import dataclass

import numpy as np

from penglm.exceptions import InvalidInputError
from penglm.losses import intercept_at_zero, loss_value
from penglm.penalties import PenaltySpec, concave_derivative, concave_value
from penglm.solver import FitResult, SolverConfig, fit

TRANSFORM_KINDS = ("entrywise", "group", "multi_task_rows", "singular_values", "differences")

# convex penalty whose weights multiply t(beta)
_SUBPROBLEM = {
    "entrywise": "lasso",
    "group": "group_lasso",
    "multi_task_rows": "multi_task_lasso",
    "singular_values": "nuclear_norm",
    "differences": "tv1",
}

# stand-in for an infinite weight; large enough that the prox zeroes the entry
WEIGHT_SENTINEL = 1e30


@dataclass
class TransformSpec:
    kind: str
    groups: list | None = None

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise InvalidInputError(f"unknown transform {self.kind!r}")
        if self.kind == "group":
            if not self.groups:
                raise InvalidInputError("group transform needs groups")
            self.groups = [np.asarray(g, dtype=int).ravel() for g in self.groups]


def transform(spec, beta):
    """Nonnegative magnitudes t(beta), a flat vector of length D."""
    beta = np.asarray(beta, dtype=float)
    kind = spec.kind
    if kind == "entrywise":
        return np.abs(beta).ravel()
    if kind == "group":
        if beta.ndim != 1:
            raise InvalidInputError("group transform needs a vector")
        return np.array([np.linalg.norm(beta[g]) for g in spec.groups])
    if kind == "differences":
        if beta.ndim != 1:
            raise InvalidInputError("difference transform needs a vector")
        return np.abs(np.diff(beta))
    if beta.ndim != 2:
        raise InvalidInputError(f"{kind} transform needs a matrix")
    if kind == "multi_task_rows":
        return np.linalg.norm(beta, axis=1)
    return np.linalg.svd(beta, compute_uv=False)


def weighted_subproblem(tspec, weights, coef_shape=None):
    """Convex penalty ``sum_j weights_j t_j(beta)`` (pen_val 1)."""
    w = np.asarray(weights, dtype=float)
    kind = _SUBPROBLEM[tspec.kind]
    if tspec.kind == "entrywise" and coef_shape is not None:
        w = w.reshape(coef_shape)
    return PenaltySpec(kind, pen_val=1.0, weights=w, groups=tspec.groups)


@dataclass
class AdaptiveSpec:
    """Power-law adaptive weights ``(t(init) + 1/n)^(-expon)``.

    ``init`` is a FitResult or a coefficient array; ``n`` is required when
    ``perturbation == 'one_over_n'``.
    """

    expon: float = 1.0
    perturbation: str = "one_over_n"
    init: object = None
    n: int | None = None

    def __post_init__(self):
        if not self.expon > 0:
            raise InvalidInputError("adaptive exponent must be positive")
        if self.perturbation not in ("none", "one_over_n"):
            raise InvalidInputError(f"unknown perturbation {self.perturbation!r}")
        if self.perturbation == "one_over_n" and not (self.n and self.n > 0):
            raise InvalidInputError("one_over_n perturbation needs n")


def _coef_of(init):
    return np.asarray(init.coef if isinstance(init, FitResult) else init, dtype=float)


def adaptive_weights(spec, tspec):
    if spec.init is None:
        raise InvalidInputError("adaptive weights need an initial estimate")
    t = transform(tspec, _coef_of(spec.init))
    if spec.perturbation == "one_over_n":
        return (t + 1.0 / spec.n) ** (-spec.expon)
    w = np.full(t.shape, WEIGHT_SENTINEL)
    pos = t > 0
    w[pos] = np.minimum(t[pos] ** (-spec.expon), WEIGHT_SENTINEL)
    return w


def adaptive_penalty(spec, tspec, pen_val=1.0):
    """Weighted convex penalty built from adaptive weights."""
    init = _coef_of(spec.init)
    pen = weighted_subproblem(tspec, adaptive_weights(spec, tspec), init.shape)
    return pen.with_pen_val(pen_val)


def nonconvex_objective(loss, gen, tspec, data, coef, intercept=None):
    """``L(beta, u) + sum_j g_lam(t_j(beta))``."""
    return loss_value(loss, data, coef, intercept) + float(
        np.sum(concave_value(gen, transform(tspec, coef))))


def _lla_weights(gen, tspec, coef):
    w = concave_derivative(gen, transform(tspec, coef))
    if tspec.kind == "singular_values":
        # g' is nonincreasing and sigma is sorted descending, so this only
        # removes rounding noise
        w = np.maximum.accumulate(w)
    return w


def lla(loss, gen, tspec, data, init, cfg=None, max_steps=5, fit_intercept=True,
        init_intercept=None, tol=1e-8):
    """Local linear approximation for a folded concave penalty.

    Step s solves the convex problem with weights ``g'(t(beta_s))``, warm
    started at ``beta_s``. A step whose surrogate objective does not improve
    on the current point (possible only through inexact inner solves) is
    rejected, so the non-convex objective never increases.

    Parameters
    ----------
    loss : LossSpec
    gen : ConcaveGenerator
    tspec : TransformSpec
    data : Dataset
    init : FitResult or array
        Starting coefficient; zeros gives a first step equal to the lasso.
    cfg : SolverConfig, optional
    max_steps : int
    fit_intercept : bool
    init_intercept : float or array, optional
        Defaults to the intercept of ``init`` if it is a FitResult.

    Returns
    -------
    FitResult
        ``history`` holds the per-step coefficients, objectives and whether
        the step was accepted.
    """
    cfg = cfg or SolverConfig()
    if max_steps < 1:
        raise InvalidInputError("max_steps must be at least 1")
    coef = _coef_of(init).copy()
    if init_intercept is None and isinstance(init, FitResult):
        init_intercept = init.intercept
    if not fit_intercept:
        init_intercept = None
    elif init_intercept is None:
        init_intercept = intercept_at_zero(loss, data)
    current = FitResult(coef=coef, intercept=init_intercept, objective=np.nan,
                        n_iter=0, converged=False)

    hist = {"coef": [], "objective": [], "accepted": [],
            "initial_objective": nonconvex_objective(loss, gen, tspec, data, coef,
                                                     init_intercept)}
    total_iter = 0
    converged = False
    steps = 0
    for steps in range(1, max_steps + 1):
        w = _lla_weights(gen, tspec, current.coef)
        pen = weighted_subproblem(tspec, w, current.coef.shape)
        new = fit(loss, pen, data, cfg, warm_start=current, fit_intercept=fit_intercept)
        total_iter += new.n_iter

        old_sur = loss_value(loss, data, current.coef, current.intercept) + float(
            w @ transform(tspec, current.coef))
        accepted = new.objective <= old_sur
        change = np.max(np.abs(new.coef - current.coef), initial=0.0)
        if accepted:
            current = new
        hist["coef"].append(current.coef.copy())
        hist["objective"].append(
            nonconvex_objective(loss, gen, tspec, data, current.coef, current.intercept))
        hist["accepted"].append(accepted)
        if not accepted or change <= tol * (1 + np.max(np.abs(current.coef), initial=0.0)):
            converged = True
            break

    return FitResult(coef=current.coef, intercept=current.intercept,
                     objective=hist["objective"][-1], n_iter=total_iter,
                     converged=converged, history=dict(hist, steps=steps))


def lla_killer_bound(gen, tspec, init, klb):
    """Smallest lambda for which LLA from ``init`` returns zero after one step.

    With SCAD-like constants (a1, b1), ``g'(x) >= a1 lam`` for ``x <= b1 lam``,
    so every first-step weight is at least ``a1 lam`` once
    ``lam >= max(||t(init)||_inf / b1, klb / a1)``.
    """
    a1, b1 = gen.scad_like_params
    t = transform(tspec, _coef_of(init))
    return max(np.max(t, initial=0.0) / b1, klb / a1)


def lla_path(loss, gen, tspec, data, grid, init, cfg=None, max_steps=5,
             fit_intercept=True, init_intercept=None):
    """One LLA run per lambda, each started from the same initial estimate."""
    return [lla(loss, gen.with_pen_val(lam), tspec, data, init, cfg, max_steps,
                fit_intercept, init_intercept) for lam in grid]
