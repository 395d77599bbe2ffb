import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from moctsvm.dataset import (
    DataError,
    FoldPlan,
    apply_normalization,
    from_labels,
    holdout_split,
    load_csv,
    normalize,
    stratified_folds,
    stratified_subsample,
)


def _write(tmp_path, text, name="d.csv"):
    f = tmp_path / name
    f.write_text(text)
    return f


def test_load_csv_default_label_is_last(tmp_path):
    d = load_csv(_write(tmp_path, "a,b,cls\n1,2,x\n3,4,y\n5,6,x\n"))
    assert d.feature_names == ("a", "b")
    assert d.class_names == ("x", "y")
    assert d.y.tolist() == [1, 2, 1]
    assert d.X.tolist() == [[1, 2], [3, 4], [5, 6]]


def test_load_csv_label_by_name_and_index(tmp_path):
    f = _write(tmp_path, "cls,a\nu,1\nv,2\n")
    assert load_csv(f, "cls").feature_names == ("a",)
    assert load_csv(f, 0).class_names == ("u", "v")


@pytest.mark.parametrize(
    "text",
    ["a,c\n1,x\n2,x\n", "a,c\nfoo,x\n2,y\n", "a,c\nnan,x\n2,y\n", "a,c\n1,x,9\n2,y\n", ""],
)
def test_load_csv_rejects_bad_input(tmp_path, text):
    with pytest.raises(DataError):
        load_csv(_write(tmp_path, text))


def test_missing_file():
    with pytest.raises(DataError):
        load_csv("/nonexistent/file.csv")


def test_normalize_known_values():
    d = normalize(from_labels([[0.0, 5.0], [2.0, 5.0], [4.0, 5.0]], ["a", "b", "a"]))
    assert np.allclose(d.X[:, 0], [0, 0.5, 1])
    assert np.allclose(d.X[:, 1], 0)
    assert normalize(d) is d


def test_apply_normalization_clamps_test_rows():
    train = normalize(from_labels([[0.0], [10.0]], ["a", "b"]))
    test = apply_normalization(from_labels([[-5.0], [5.0], [20.0]], ["a", "b", "a"]), train.normalization)
    assert test.X[:, 0].tolist() == [0.0, 0.5, 1.0]


@given(arrays(float, st.tuples(st.integers(2, 30), st.integers(1, 4)), elements=st.floats(-1e3, 1e3)))
def test_normalize_range(X):
    labels = [i % 2 for i in range(X.shape[0])]
    d = normalize(from_labels(X, labels))
    assert d.X.min() >= 0.0 and d.X.max() <= 1.0
    assert np.allclose(d.raw_X()[:, X.max(0) > X.min(0)], X[:, X.max(0) > X.min(0)], atol=1e-9)


def _labelled(counts):
    labels = [k for k, c in enumerate(counts) for _ in range(c)]
    return from_labels(np.arange(len(labels), dtype=float)[:, None], labels)


@given(st.lists(st.integers(3, 25), min_size=2, max_size=4), st.integers(2, 5), st.integers(0, 2**16))
def test_folds_stratified_and_partition(counts, k, seed):
    d = _labelled(counts)
    plan = stratified_folds(d, k, repeats=2, seed=seed)
    for r in range(2):
        tests = [te for rr, _, _, te in plan.splits() if rr == r]
        allidx = np.sort(np.concatenate(tests))
        assert allidx.tolist() == list(range(d.n))
        sizes = [t.size for t in tests]
        assert max(sizes) - min(sizes) <= 1
        for cls in range(1, d.K + 1):
            per = [(d.y[t] == cls).sum() for t in tests]
            assert max(per) - min(per) <= 1


def test_folds_deterministic_and_roundtrip():
    d = _labelled([10, 12, 9])
    a = stratified_folds(d, 5, 3, seed=7)
    assert a == stratified_folds(d, 5, 3, seed=7)
    assert FoldPlan.from_json(a.to_json()) == a
    assert a != stratified_folds(d, 5, 3, seed=8)


def test_folds_reject_bad_k():
    d = _labelled([2, 2])
    with pytest.raises(DataError):
        stratified_folds(d, 1)
    with pytest.raises(DataError):
        stratified_folds(d, 5)


def test_subsample_proportions():
    d = _labelled([50, 50, 50])
    s = stratified_subsample(d, 60, seed=1)
    assert s.n == 60
    assert s.class_counts().tolist() == [20, 20, 20]


def test_holdout_keeps_every_class_in_train():
    d = _labelled([5, 3, 2])
    tr, va = holdout_split(d, 0.2, seed=0)
    assert np.intersect1d(tr, va).size == 0
    assert set(d.y[tr]) == {1, 2, 3}
    assert tr.size + va.size == d.n


def test_first_appearance_encoding(tmp_path):
    d = load_csv(_write(tmp_path, "f,c\n1,a\n2,b\n3,a\n4,b\n"))
    assert (d.n, d.K, d.y.tolist()) == (4, 2, [1, 2, 1, 2])
    assert (d.Y.argmax(1) + 1).tolist() == d.y.tolist()
    assert d.Y.sum(1).tolist() == [1] * 4


def test_iris_shape_and_fold_sizes(iris_path):
    d = load_csv(iris_path)
    assert (d.n, d.p, d.K) == (150, 4, 3)
    plan = stratified_folds(d, 5, 5, seed=0)
    sizes = [(tr.size, te.size) for _, _, tr, te in plan.splits()]
    assert sizes == [(120, 30)] * 25


def test_perfect_stratification():
    d = _labelled([5, 5])
    for _, _, _, te in stratified_folds(d, 5, seed=3).splits():
        assert sorted(d.y[te].tolist()) == [1, 2]


def test_error_names_row_and_column(tmp_path):
    with pytest.raises(DataError, match=r"row 2.*'a'"):
        load_csv(_write(tmp_path, "a,c\n1,x\nbad,y\n"))
