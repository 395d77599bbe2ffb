import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moctsvm.baseline_cart import CartConfig, best_split, fit_cart, gini
from moctsvm.classifier import accuracy, visits
from moctsvm.dataset import Dataset, from_labels, load_csv, normalize


@pytest.mark.parametrize("counts,expected", [((5, 5), 0.5), ((10, 0), 0.0), ((2, 1, 1), 0.625)])
def test_gini_values(counts, expected):
    assert gini(counts) == pytest.approx(expected)


def test_gini_rejects_empty():
    with pytest.raises(ValueError):
        gini([0, 0])


def test_midpoint_split():
    d = from_labels([[0.0], [0.1], [0.9], [1.0]], ["A", "A", "B", "B"])
    c = fit_cart(d, CartConfig(max_depth=1, min_leaf_fraction=0.01))
    w, w0 = c.hyperplanes[1]
    assert w.tolist() == [1.0] and -w0 == pytest.approx(0.5)
    assert accuracy(c, d) == 1.0


def test_pure_sample_is_not_split():
    d = Dataset(np.random.default_rng(0).random((6, 2)), np.ones(6, dtype=int), ("a", "b"), ("x", "y"))
    c = fit_cart(d, CartConfig(max_depth=2, min_leaf_fraction=0.1))
    assert c.active_nodes == 0
    assert set(c.predict(d.X)) == {1}


def test_xor_depth_one():
    d = from_labels([[0, 0], [1, 1], [0, 1], [1, 0]], ["p", "p", "n", "n"])
    assert accuracy(fit_cart(d, CartConfig(max_depth=1, min_leaf_fraction=0.01)), d) <= 0.75


def _brute_best(X, y, K, min_leaf):
    best = None
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            r = X[:, j] > thr
            if r.sum() < min_leaf or (~r).sum() < min_leaf:
                continue
            s = sum(side.sum() * gini(np.bincount(y[side] - 1, minlength=K)) for side in (r, ~r)) / y.size
            if best is None or s < best[0] - 1e-12:
                best = (s, j, thr)
    return best


@settings(max_examples=80)
@given(st.integers(0, 2**31), st.integers(4, 25), st.integers(1, 3), st.integers(1, 4))
def test_best_split_matches_enumeration(seed, n, p, min_leaf):
    rng = np.random.default_rng(seed)
    X = np.round(rng.random((n, p)), 1)  # rounding creates ties
    y = rng.integers(1, 4, n)
    got = best_split(X, y, 3, min_leaf)
    ref = _brute_best(X, y, 3, min_leaf)
    if ref is None:
        assert got is None
    else:
        assert got[0] == pytest.approx(ref[0], abs=1e-12)
        assert (got[1], got[2]) == pytest.approx((ref[1], ref[2]))


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_splits_reduce_impurity_and_respect_min_leaf(seed, D):
    rng = np.random.default_rng(seed)
    d = normalize(from_labels(rng.random((40, 2)), rng.integers(0, 3, 40).tolist()))
    c = fit_cart(d, CartConfig(max_depth=D, min_leaf_fraction=0.1))
    members = visits(c, d.X)
    for t, on in c.split_flags.items():
        if not on:
            continue
        kids = [members[2 * t], members[2 * t + 1]]
        assert min(k.size for k in kids) >= 4
        parent = gini(np.bincount(d.y[members[t]] - 1, minlength=d.K))
        child = sum(k.size * gini(np.bincount(d.y[k] - 1, minlength=d.K)) for k in kids) / members[t].size
        assert child < parent


def test_node_cap():
    d = normalize(load_csv(_iris()))
    for cap in range(0, 8):
        assert fit_cart(d, CartConfig(3, 0.05, max_active_nodes=cap)).active_nodes <= cap


def _iris():
    from pathlib import Path

    return Path(__file__).resolve().parents[1] / "data" / "iris.csv"


def test_rejects_bad_config():
    with pytest.raises(ValueError):
        CartConfig(max_depth=0)
    with pytest.raises(ValueError):
        CartConfig(min_leaf_fraction=1.5)
