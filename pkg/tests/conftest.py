import contextlib

import numpy as np
import pytest

from penglm import Dataset, LossSpec

# criterion number -> (description, passed)
ACCEPTANCE = {}


@contextlib.contextmanager
def criterion(number, description):
    """Record a pass/fail line for an acceptance criterion."""
    try:
        yield
    except BaseException:
        ACCEPTANCE[number] = (description, False)
        print(f"criterion {number}: FAIL - {description}")
        raise
    ACCEPTANCE[number] = (description, True)
    print(f"criterion {number}: PASS - {description}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        desc, ok = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} - {desc}")


SMOOTH_LOSSES = [
    LossSpec("least_squares"),
    LossSpec("logistic"),
    LossSpec("multinomial", class_count=3),
    LossSpec("poisson"),
    LossSpec("huber", knot=1.0),
    LossSpec("quantile", quantile=0.3, smoothing=0.5),
    LossSpec("squared_hinge"),
]


def make_data(kind, n, d, rng, K=None, weights=False, offsets=False):
    """Random instance whose response lies in the domain of ``kind``."""
    X = rng.normal(size=(n, d))
    b = rng.normal(size=d) * 0.5
    eta = X @ b
    if K is not None and kind != "multinomial":
        B = rng.normal(size=(d, K)) * 0.5
        eta = X @ B
    if kind in ("least_squares", "quantile"):
        y = eta + rng.normal(size=eta.shape)
    elif kind == "huber":
        y = eta + rng.standard_t(2, size=eta.shape)
    elif kind == "logistic":
        y = (rng.uniform(size=eta.shape) < 1 / (1 + np.exp(-eta))).astype(float)
        if y.ndim == 1:
            y[:2] = [0, 1]
        else:
            y[:2] = [[0] * y.shape[1], [1] * y.shape[1]]
    elif kind == "poisson":
        y = rng.poisson(np.exp(0.5 * eta)).astype(float)
        if y.ndim == 1:
            y[0] = max(y[0], 1)
        else:
            y[0] = np.maximum(y[0], 1)
    elif kind == "squared_hinge":
        y = np.where(eta + rng.normal(size=eta.shape) > 0, 1.0, -1.0)
        y[:2] = [-1, 1]
    elif kind == "multinomial":
        K = K or 3
        logits = X @ rng.normal(size=(d, K))
        y = np.array([rng.choice(K, p=np.exp(r - r.max()) / np.exp(r - r.max()).sum())
                      for r in logits], dtype=float)
        y[:K] = np.arange(K)
    else:
        raise ValueError(kind)
    s = rng.uniform(0.2, 2.0, size=n) if weights else None
    o = rng.normal(size=n) * 0.3 if offsets else None
    return Dataset(X, y, sample_weights=s, offsets=o)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
