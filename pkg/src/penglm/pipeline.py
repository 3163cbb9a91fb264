"""End-to-end estimator: standardize, build the grid, fit or tune, map back.

Order of operations:

1. standardize the covariates (centering only when an intercept is fit);
2. for adaptive or folded concave flavors, fit a CV-tuned convex estimator
   on the full standardized data to serve as the initial estimate;
3. compute lambda_max (killer lower bound, adaptive weights included) and
   the log-spaced grid;
4. fit a single value, a path, or tune by cross-validation or an
   information criterion;
5. map every fit back to the raw covariate scale.
"""
from dataclasses import dataclass, field

import numpy as np

from penglm.adaptive_lla import (
    AdaptiveSpec,
    TransformSpec,
    adaptive_penalty,
    adaptive_weights,
    lla_killer_bound,
    lla_path,
)
from penglm.data import StandardizationState, standardize, unstandardize_coef
from penglm.exceptions import InvalidInputError, UnsupportedError
from penglm.penalties import ConcaveGenerator
from penglm.solver import TunePath, fit, fit_path
from penglm.tuning import (
    GridSpec,
    cross_validate,
    klb,
    lambda_max,
    make_grid,
    select_by_ic,
)

FLAVORS = ("convex", "adaptive", "scad", "mcp")

_TRANSFORM_OF = {
    "lasso": "entrywise",
    "group_lasso": "group",
    "multi_task_lasso": "multi_task_rows",
    "nuclear_norm": "singular_values",
    "tv1": "differences",
}


@dataclass
class EstimatorResult:
    """Fits on the standardized scale plus their raw-scale counterparts."""

    path: TunePath
    raw: list
    state: StandardizationState
    lmax: float
    lmax_exact: bool
    flavor: str
    penalty: object
    init: object = None
    info: dict = field(default_factory=dict)

    @property
    def selected_raw(self):
        return self.raw[self.path.selected_index]


def transform_for(pen):
    if pen.kind not in _TRANSFORM_OF:
        raise UnsupportedError(f"adaptive and non-convex flavors do not support {pen.kind}")
    return TransformSpec(_TRANSFORM_OF[pen.kind], pen.groups)


def _cv_init(loss, pen, data, grid_spec, k, seed, cfg, fit_intercept, n_jobs):
    lmax, _ = lambda_max(loss, pen, data, fit_intercept)
    grid = make_grid(lmax, grid_spec)
    path = cross_validate(loss, pen, data, grid, k=k, seed=seed, rule="min", cfg=cfg,
                          fit_intercept=fit_intercept, n_jobs=n_jobs)
    return path.selected


def run_estimator(loss, pen, data, mode="cv", flavor="convex", grid_spec=None, pen_val=None,
                  cv_k=5, cv_rule="1se", seed=0, criterion="bic", cfg=None,
                  do_standardize=True, fit_intercept=True, gen_shape=None,
                  adaptive_expon=1.0, lla_steps=5, n_jobs=1, sigma2=None):
    """Run one estimator configuration.

    Parameters
    ----------
    loss : LossSpec
    pen : PenaltySpec
        Template; its pen_val is replaced by grid values.
    data : Dataset
        Raw data.
    mode : {'fit', 'path', 'cv', 'ic'}
    flavor : {'convex', 'adaptive', 'scad', 'mcp'}
    grid_spec : GridSpec, optional
    pen_val : float, optional
        Tuning value for ``mode='fit'``; defaults to lambda_max.
    cv_k, cv_rule, seed : cross-validation settings (also used by the
        initial estimator of the two-stage flavors).
    criterion : str or SelectionCriterion
    cfg : SolverConfig, optional
    do_standardize, fit_intercept : bool
    gen_shape : float, optional
        SCAD ``a`` or MCP ``gamma``.
    adaptive_expon : float
    lla_steps : int
    n_jobs : int
    sigma2 : float, optional
        Fixed noise variance for Gaussian information criteria.

    Returns
    -------
    EstimatorResult
    """
    if flavor not in FLAVORS:
        raise InvalidInputError(f"unknown flavor {flavor!r}")
    if mode not in ("fit", "path", "cv", "ic"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    grid_spec = grid_spec or GridSpec()

    if do_standardize:
        data_std, state = standardize(data, center=fit_intercept)
    else:
        data_std, state = data, StandardizationState.identity(data.d)

    init = None
    info = {}
    path_fn = None
    if flavor == "convex":
        pen_use = pen
        lmax, exact = lambda_max(loss, pen, data_std, fit_intercept)
    else:
        tspec = transform_for(pen)
        init = _cv_init(loss, pen, data_std, grid_spec, cv_k, seed, cfg, fit_intercept, n_jobs)
        if flavor == "adaptive":
            aspec = AdaptiveSpec(expon=adaptive_expon, init=init, n=data.n)
            pen_use = adaptive_penalty(aspec, tspec)
            info["adaptive_weights"] = adaptive_weights(aspec, tspec)
            lmax, exact = lambda_max(loss, pen_use, data_std, fit_intercept)
        else:
            gen = ConcaveGenerator(flavor, 1.0, gen_shape)
            pen_use = gen
            base = klb(loss, pen.kind, data_std, None, pen.groups, fit_intercept) \
                if pen.kind != "tv1" else lambda_max(loss, pen, data_std, fit_intercept)[0]
            lmax = lla_killer_bound(gen, tspec, init, base)
            exact = pen.kind != "tv1"

            def path_fn(train, grid):
                return lla_path(loss, gen, tspec, train, grid, init.coef, cfg, lla_steps,
                                fit_intercept)

    if mode == "fit":
        lam = lmax if pen_val is None else float(pen_val)
        grid = np.array([lam])
    else:
        grid = make_grid(lmax, grid_spec)

    if mode in ("fit", "path", "ic"):
        if path_fn is not None:
            fits = path_fn(data_std, grid)
        elif mode == "fit":
            fits = [fit(loss, pen_use.with_pen_val(grid[0]), data_std, cfg,
                        fit_intercept=fit_intercept)]
        else:
            fits = fit_path(loss, pen_use, data_std, grid, cfg, fit_intercept).fits
        path = TunePath(grid=grid, fits=list(fits))
        if mode == "ic":
            path = select_by_ic(path, criterion, loss, data_std, sigma2=sigma2,
                                pen_kind=pen.kind, groups=pen.groups)
        elif mode == "fit":
            path.selected_index, path.selection_rule = 0, "fixed"
    else:
        path = cross_validate(loss, pen_use, data_std, grid, k=cv_k, seed=seed, rule=cv_rule,
                              cfg=cfg, standardize_folds=do_standardize,
                              fit_intercept=fit_intercept, path_fn=path_fn, n_jobs=n_jobs)

    raw = [unstandardize_coef(f.coef, f.intercept, state) for f in path.fits]
    path.state = state
    return EstimatorResult(path=path, raw=raw, state=state, lmax=float(lmax),
                           lmax_exact=bool(exact), flavor=flavor, penalty=pen_use,
                           init=init, info=info)

