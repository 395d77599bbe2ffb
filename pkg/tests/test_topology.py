import pytest
from hypothesis import given, strategies as st

from moctsvm.topology import build_topology


def test_depth_three_ranges():
    t = build_topology(3)
    assert t.T == 15
    assert t.leaf_nodes == tuple(range(8, 16))
    assert t.branch_nodes == tuple(range(1, 8))


def test_depth_one():
    t = build_topology(1)
    assert t.T == 3
    assert t.parent(2) == t.parent(3) == 1
    assert t.left_nodes == (2,)
    assert t.right_nodes == (3,)


def test_depth_two_levels():
    assert build_topology(2).levels == ((1,), (2, 3), (4, 5, 6, 7))


def test_ancestor_examples():
    t = build_topology(3)
    assert t.ancestor_at_level(13, 1) == 3
    assert t.ancestor_at_level(13, t.level(13)) == 13
    assert t.ancestor_at_level(15, 0) == 1
    with pytest.raises(ValueError):
        t.ancestor_at_level(2, 2)


def test_rejects_depth_zero():
    with pytest.raises(ValueError):
        build_topology(0)


@given(st.integers(1, 6))
def test_invariants(D):
    t = build_topology(D)
    assert t.T == 2 ** (D + 1) - 1
    assert set(t.left_nodes) | set(t.right_nodes) == set(range(2, t.T + 1))
    assert all(v % 2 == 0 for v in t.left_nodes)
    assert t.levels[0] == (1,)
    assert all(len(u) == 2**s for s, u in enumerate(t.levels))
    assert t.levels[D] == t.leaf_nodes
    for v in range(2, t.T + 1):
        assert t.level(v) == t.level(t.parent(v)) + 1
    for b in t.branch_nodes:
        assert t.children(b) == (2 * b, 2 * b + 1)


@given(st.integers(1, 5), st.data())
def test_ancestor_matches_parent_iteration(D, data):
    t = build_topology(D)
    leaf = data.draw(st.sampled_from(t.leaf_nodes))
    node = leaf
    for s in range(D, -1, -1):
        assert t.ancestor_at_level(leaf, s) == node
        node = t.parent(node) if node > 1 else node
