"""Penalized generalized linear models fitted by accelerated proximal gradient."""

__version__ = "0.1.0"

from penglm.adaptive_lla import (
    AdaptiveSpec,
    TransformSpec,
    adaptive_penalty,
    adaptive_weights,
    lla,
    lla_killer_bound,
    lla_path,
    nonconvex_objective,
    transform,
)
from penglm.constraints import ConstraintSpec, project
from penglm.data import Dataset, StandardizationState, read_csv, standardize, unstandardize_coef
from penglm.exceptions import (
    DivergenceError,
    DomainError,
    InfeasibleError,
    InvalidInputError,
    PenGLMError,
    UnboundedInterceptError,
    UnsupportedError,
)
from penglm.losses import (
    LossSpec,
    intercept_at_zero,
    lipschitz_constant,
    loss_gradient,
    loss_value,
)
from penglm.penalties import (
    ConcaveGenerator,
    PenaltySpec,
    concave_derivative,
    concave_value,
    penalty_value,
    prox,
)
from penglm.pipeline import EstimatorResult, run_estimator
from penglm.solver import FitResult, SolverConfig, TunePath, fit, fit_infimal, fit_path
from penglm.tuning import (
    GridSpec,
    SelectionCriterion,
    cross_validate,
    degrees_of_freedom,
    klb,
    lambda_max,
    make_grid,
    newton_lambda_max,
    noise_variance,
    ridge_lambda_max,
    select_by_ic,
)
