import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from penglm import Dataset, InvalidInputError, StandardizationState, standardize, unstandardize_coef
from penglm.data import read_csv


def test_two_symmetric_points():
    data, state = standardize(Dataset([[1.0], [3.0]], [0.0, 1.0]))
    assert np.allclose(data.X[:, 0], [-1, 1])
    assert state.col_scales[0] == 1.0


def test_zero_variance_column_is_centered_only():
    data, state = standardize(Dataset([[1, 5], [2, 5], [3, 5]], [0, 1, 2]))
    assert np.array_equal(data.X[:, 1], np.zeros(3))
    assert state.col_scales[1] == 1.0


def test_standardize_is_idempotent(rng):
    data, _ = standardize(Dataset(rng.normal(size=(20, 4)) * 3 + 1, rng.normal(size=20)))
    again, state = standardize(data)
    assert np.max(np.abs(again.X - data.X)) < 1e-12
    assert np.allclose(state.col_scales, 1, atol=1e-12)


def test_weighted_means_are_zero(rng):
    s = rng.uniform(0.1, 3, size=30)
    data, _ = standardize(Dataset(rng.normal(size=(30, 3)) + 4, rng.normal(size=30), s))
    assert np.max(np.abs(s @ data.X / s.sum())) < 1e-12
    var = s @ data.X ** 2 / s.sum()
    assert np.allclose(var, 1, atol=1e-12)


def test_identity_state_roundtrip():
    beta, inter = unstandardize_coef(np.array([1.0, -2.0]), 0.5, StandardizationState.identity(2))
    assert np.array_equal(beta, [1.0, -2.0]) and inter == 0.5


def test_scale_two():
    state = StandardizationState(np.zeros(3), np.full(3, 2.0))
    beta, inter = unstandardize_coef(np.array([2.0, 4.0, 6.0]), 1.5, state)
    assert np.array_equal(beta, [1.0, 2.0, 3.0]) and inter == 1.5


def test_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        unstandardize_coef(np.ones(3), 0.0, StandardizationState.identity(2))


def test_prediction_invariance_random(rng):
    raw = Dataset(rng.normal(size=(5, 3)) * [1, 5, 0.1] + [2, -1, 3], rng.normal(size=5))
    std, state = standardize(raw)
    beta_s, u_s = rng.normal(size=3), rng.normal()
    beta_r, u_r = unstandardize_coef(beta_s, u_s, state)
    assert np.max(np.abs((raw.X @ beta_r + u_r) - (std.X @ beta_s + u_s))) < 1e-10


def test_matrix_coefficient_invariance(rng):
    raw = Dataset(rng.normal(size=(8, 3)) + 1, rng.normal(size=(8, 2)))
    std, state = standardize(raw)
    B, u = rng.normal(size=(3, 2)), rng.normal(size=2)
    Br, ur = unstandardize_coef(B, u, state)
    assert np.allclose(raw.X @ Br + ur, std.X @ B + u, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-1e3, 1e3)))
def test_apply_invert_recovers_x(X):
    data = Dataset(X, np.zeros(6))
    _, state = standardize(data)
    back = state.invert(state.apply(X))
    assert np.all(np.abs(back - X) <= 1e-12 * np.maximum(1.0, np.abs(X)) + 1e-9)


@pytest.mark.parametrize("kwargs", [
    dict(X=np.ones((3, 2)), y=np.ones(2)),
    dict(X=np.ones((2, 2)), y=np.ones(2), sample_weights=[0, 0]),
    dict(X=np.ones((2, 2)), y=np.ones(2), sample_weights=[1, -1]),
    dict(X=[[np.nan, 1], [1, 1]], y=np.ones(2)),
    dict(X=np.ones((2, 2)), y=np.ones(2), offsets=np.ones(3)),
])
def test_invalid_datasets(kwargs):
    with pytest.raises(InvalidInputError):
        Dataset(**kwargs)


def test_standardize_needs_two_rows():
    with pytest.raises(InvalidInputError):
        standardize(Dataset([[1.0]], [1.0]))


def test_read_csv(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b,w,y\n1,2,1,0.5\n3,4,2,1.5\n")
    data, names = read_csv(str(path), "y", weights_col="w")
    assert names == ["a", "b"]
    assert np.array_equal(data.X, [[1, 2], [3, 4]])
    assert np.array_equal(data.sample_weights, [1, 2])


def test_read_csv_multi_response(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,y1,y2\n1,2,3\n4,5,6\n")
    data, names = read_csv(str(path), ["y1", "y2"])
    assert data.y.shape == (2, 2) and names == ["a"]


@pytest.mark.parametrize("body", ["a,y\n1,\n", "a,y\n1,nan\n", "a,y\n1,x\n", "a,y\n1\n"])
def test_read_csv_rejects_bad_cells(tmp_path, body):
    path = tmp_path / "d.csv"
    path.write_text(body)
    with pytest.raises(InvalidInputError):
        read_csv(str(path), "y")


def test_read_csv_missing_response(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(InvalidInputError):
        read_csv(str(path), "y")
