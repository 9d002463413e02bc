import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcidscore.dataset import (
    DataError, Dataset, WeightMode, empirical_weights, load_csv, split_two_folds, write_csv,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_small_file(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x,z1,z2\n1,0.5,1,2\n-1,0.1,0,1\n1,2,3,4\n-1,-1,0.5,0.5\n")
    data = load_csv(p)
    assert (data.n, data.d) == (4, 2)
    np.testing.assert_array_equal(data.y, [1, -1, 1, -1])
    np.testing.assert_array_equal(data.z[2], [3, 4])


def test_zero_one_labels_mapped(tmp_path):
    p = _write(tmp_path / "d.csv", "y,x,z1\n1,0,1\n0,0,1\n0,1,2\n1,1,3\n")
    np.testing.assert_array_equal(load_csv(p).y, [1, -1, -1, 1])


def test_error_names_row_and_column(tmp_path):
    rows = ["y,x,z1,z2,z3"] + [f"1,0,1,2,{i}" for i in range(6)] + ["-1,0,1,2,nan"]
    p = _write(tmp_path / "d.csv", "\n".join(rows) + "\n")
    with pytest.raises(DataError, match=r"row 7, column z3"):
        load_csv(p)


@pytest.mark.parametrize("text, pattern", [
    ("", "empty"),
    ("y,z1\n1,2\n", "missing column 'x'"),
    ("y,x,z1\n1,0,abc\n", "row 1, column z1"),
    ("y,x,z1\n1,0\n", "row 1 has 2 fields"),
    ("y,x,z1\n2,0,1\n", "label"),
])
def test_validation_errors(tmp_path, text, pattern):
    with pytest.raises(DataError, match=pattern):
        load_csv(_write(tmp_path / "d.csv", text))


def test_csv_round_trip(tmp_path, rng):
    data = Dataset(rng.standard_normal(6), np.array([1, -1, 1, 1, -1, -1.0]), rng.standard_normal((6, 3)))
    write_csv(data, tmp_path / "o.csv")
    back = load_csv(tmp_path / "o.csv")
    np.testing.assert_array_equal(back.x, data.x)
    np.testing.assert_array_equal(back.z, data.z)


def test_standardize_option(tmp_path, rng):
    data = Dataset(rng.standard_normal(8), np.tile([1.0, -1.0], 4), 3 + 2 * rng.standard_normal((8, 2)))
    write_csv(data, tmp_path / "o.csv")
    z = load_csv(tmp_path / "o.csv", standardize=True).z
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-12)


def test_weights():
    y = np.array([1, 1, 1] + [-1] * 7, dtype=float)
    data = Dataset(np.zeros(10), y, np.zeros((10, 1)))
    w = empirical_weights(data)
    assert w.w_plus == pytest.approx(10 / 3)
    assert w.w_minus == pytest.approx(10 / 7)
    u = empirical_weights(data, WeightMode.UNIFORM)
    assert (u.w_plus, u.w_minus) == (0.5, 0.5)
    np.testing.assert_array_equal(w(np.array([1.0, -1.0])), [10 / 3, 10 / 7])


def test_degenerate_labels():
    data = Dataset(np.zeros(5), np.ones(5), np.zeros((5, 1)))
    with pytest.raises(DataError, match="degenerate"):
        empirical_weights(data)
    assert empirical_weights(data, "uniform").w_plus == 0.5


@pytest.mark.parametrize("n, sizes", [(10, (5, 5)), (9, (5, 4))])
def test_fold_sizes(n, sizes):
    data = Dataset(np.zeros(n), np.tile([1.0, -1.0], n)[:n], np.zeros((n, 1)))
    folds = split_two_folds(data, 3)
    assert (folds.fold1.size, folds.fold2.size) == sizes
    assert not set(folds.fold1) & set(folds.fold2)


def test_fold_determinism_and_swap():
    data = Dataset(np.zeros(20), np.tile([1.0, -1.0], 10), np.zeros((20, 1)))
    a, b = split_two_folds(data, 11), split_two_folds(data, 11)
    np.testing.assert_array_equal(a.fold1, b.fold1)
    s = a.swapped()
    np.testing.assert_array_equal(s.fold1, a.fold2)


def test_fold_retry_exhausted():
    y = np.array([1.0] + [-1.0] * 9)
    data = Dataset(np.zeros(10), y, np.zeros((10, 1)))
    with pytest.raises(DataError, match="both labels"):
        split_two_folds(data, 0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(4, 60), seed=st.integers(0, 2**31 - 1))
def test_folds_partition(n, seed):
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    data = Dataset(np.zeros(n), y, np.zeros((n, 1)))
    f = split_two_folds(data, seed)
    joined = np.sort(np.concatenate([f.fold1, f.fold2]))
    np.testing.assert_array_equal(joined, np.arange(n))
    assert f.fold1.size == (n + 1) // 2


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros(3), np.ones(3), np.zeros((3, 1)))
    with pytest.raises(DataError):
        Dataset(np.zeros(4), np.array([1, 0, 1, -1.0]), np.zeros((4, 1)))
    with pytest.raises(DataError):
        Dataset(np.zeros(4), np.ones(4), np.full((4, 1), np.inf))
