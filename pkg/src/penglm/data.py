"""Datasets, centering/scaling and the map back to the raw data scale."""
import csv
from dataclasses import dataclass, replace

import numpy as np

from penglm.exceptions import InvalidInputError


@dataclass(frozen=True)
class Dataset:
    """Covariates, response(s) and optional per-sample weights and offsets.

    Parameters
    ----------
    X : array-like, shape (n, d)
    y : array-like, shape (n,) or (n, K)
        Real responses, 0/1 labels, class labels or a multi-response matrix.
    sample_weights : array-like, shape (n,), optional
        Nonnegative, not all zero. They are rescaled to sum to n whenever a
        loss is evaluated, so only their relative sizes matter.
    offsets : array-like, shape (n,) or (n, K), optional
        Known additive terms in the linear predictor.
    """

    X: np.ndarray
    y: np.ndarray
    sample_weights: np.ndarray | None = None
    offsets: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] == 0:
            raise InvalidInputError("X must be a non-empty 2d array")
        y = np.asarray(self.y, dtype=float)
        if y.ndim not in (1, 2) or y.shape[0] != X.shape[0]:
            raise InvalidInputError(
                f"y has {y.shape[0] if y.ndim else 0} rows, X has {X.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInputError("X and y must be finite")

        s = self.sample_weights
        if s is not None:
            s = np.asarray(s, dtype=float).ravel()
            if s.shape[0] != X.shape[0]:
                raise InvalidInputError("sample_weights length differs from n")
            if not np.all(np.isfinite(s)) or np.any(s < 0) or not np.any(s > 0):
                raise InvalidInputError(
                    "sample_weights must be finite, nonnegative and not all zero")

        o = self.offsets
        if o is not None:
            o = np.asarray(o, dtype=float)
            if o.shape[0] != X.shape[0] or o.ndim > 2:
                raise InvalidInputError("offsets must have n rows")
            if not np.all(np.isfinite(o)):
                raise InvalidInputError("offsets must be finite")

        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sample_weights", s)
        object.__setattr__(self, "offsets", o)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def norm_weights(self):
        """Sample weights rescaled so they sum to n (ones if absent)."""
        if self.sample_weights is None:
            return np.ones(self.n)
        s = self.sample_weights
        return s * (self.n / s.sum())

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            X=self.X[idx],
            y=self.y[idx],
            sample_weights=None if self.sample_weights is None else self.sample_weights[idx],
            offsets=None if self.offsets is None else self.offsets[idx],
        )

    def with_X(self, X):
        return replace(self, X=X)


@dataclass(frozen=True)
class StandardizationState:
    col_means: np.ndarray
    col_scales: np.ndarray
    y_mean: float | np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.col_scales) <= 0):
            raise InvalidInputError("column scales must be strictly positive")

    def apply(self, X):
        return (np.asarray(X, dtype=float) - self.col_means) / self.col_scales

    def invert(self, X_std):
        return np.asarray(X_std) * self.col_scales + self.col_means

    @classmethod
    def identity(cls, d):
        return cls(np.zeros(d), np.ones(d))


def standardize(data, center=True, scale=True):
    """Center and scale the columns of X.

    Means and standard deviations are weighted by the sample weights when
    present, and the standard deviation uses divisor n. Zero-variance
    columns keep scale 1 and are only centered.

    Parameters
    ----------
    data : Dataset
    center, scale : bool

    Returns
    -------
    data_std : Dataset
        Same response, weights and offsets with transformed X.
    state : StandardizationState
    """
    if data.n < 2:
        raise InvalidInputError("standardization needs at least two rows")
    s = data.norm_weights()
    X = data.X
    if center:
        means = s @ X / data.n
    else:
        means = np.zeros(data.d)
    if scale:
        var = s @ (X - means) ** 2 / data.n
        scales = np.sqrt(var)
        # relative test so that constant columns with rounding noise stay at 1
        tiny = scales <= 1e-12 * np.maximum(1.0, np.abs(means))
        scales[tiny] = 1.0
    else:
        scales = np.ones(data.d)

    y_mean = None
    if data.y.ndim == 1:
        y_mean = float(s @ data.y / data.n)
    else:
        y_mean = s @ data.y / data.n
    state = StandardizationState(means, scales, y_mean)
    return data.with_X(state.apply(X)), state


def unstandardize_coef(beta_std, inter_std, state):
    """Map a fit on standardized covariates back to the raw covariate scale.

    ``beta_raw[j] = beta_std[j] / scale[j]`` and the intercept absorbs the
    centering, ``u_raw = u_std - sum_j beta_std[j] * mean[j] / scale[j]``.
    Matrix coefficients are handled row-wise.
    """
    beta_std = np.asarray(beta_std, dtype=float)
    d = state.col_scales.shape[0]
    if beta_std.shape[0] != d:
        raise InvalidInputError(
            f"coefficient has {beta_std.shape[0]} rows, state has {d}")
    if beta_std.ndim == 1:
        beta_raw = beta_std / state.col_scales
    else:
        beta_raw = beta_std / state.col_scales[:, None]
    shift = state.col_means @ beta_raw
    if inter_std is None:
        inter_raw = None if not np.any(state.col_means) else -shift
    else:
        inter_raw = inter_std - shift
    if np.ndim(inter_raw) == 0 and inter_raw is not None:
        inter_raw = float(inter_raw)
    return beta_raw, inter_raw


def read_csv(path, response, weights_col=None, offset_col=None):
    """Load a dense numeric CSV with a header row.

    Parameters
    ----------
    path : str
    response : str or list of str
        Response column name(s); several names give a multi-response y.
    weights_col, offset_col : str, optional

    Returns
    -------
    data : Dataset
    feature_names : list of str
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise InvalidInputError(f"{path} has a header but no data rows")

    table = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise InvalidInputError(
                f"row {i + 2} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            try:
                val = float(cell)
            except ValueError:
                raise InvalidInputError(
                    f"row {i + 2}, column {header[j]!r}: cannot parse {cell!r}") from None
            if not np.isfinite(val):
                raise InvalidInputError(
                    f"row {i + 2}, column {header[j]!r}: missing or non-finite value")
            table[i, j] = val

    responses = [response] if isinstance(response, str) else list(response)
    special = list(responses)
    for name in [weights_col, offset_col]:
        if name is not None:
            special.append(name)
    for name in special:
        if name not in header:
            raise InvalidInputError(f"column {name!r} not found in {path}")

    col = {name: header.index(name) for name in special}
    y = table[:, [col[r] for r in responses]]
    if len(responses) == 1:
        y = y[:, 0]
    features = [h for h in header if h not in special]
    X = table[:, [header.index(h) for h in features]]
    return Dataset(
        X=X,
        y=y,
        sample_weights=None if weights_col is None else table[:, col[weights_col]],
        offsets=None if offset_col is None else table[:, col[offset_col]],
    ), features
