import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moctsvm.classifier import (
    ModelFormatError,
    TreeClassifier,
    accuracy,
    build_classifier,
    from_document,
    load,
    save,
    to_document,
    write_predictions,
)
from moctsvm.dataset import from_labels, normalize
from moctsvm.topology import build_topology


def _axis_tree():
    """Depth-2 tree on two features: x0 splits at 0.5, then x1 at 0.5 on the right only."""
    d = normalize(from_labels([[0, 0], [0, 1], [1, 0], [1, 1]], ["a", "a", "b", "c"]))
    topo = build_topology(2)
    hp = {1: (np.array([1.0, 0.0]), -0.5), 3: (np.array([0.0, 1.0]), -0.5)}
    return build_classifier(topo, hp, d), d


def test_routing_and_pruned_node_majority():
    c, d = _axis_tree()
    assert c.split_flags == {1: True, 2: False, 3: True}
    assert c.predict([[0.2, 0.9], [0.9, 0.1], [0.9, 0.9]]).tolist() == [1, 2, 3]
    assert c.terminal_nodes(np.array([[0.2, 0.2]])).tolist() == [2]
    assert accuracy(c, d) == 1.0
    assert c.active_nodes == 2


def test_zero_score_goes_left():
    c, _ = _axis_tree()
    assert c.terminal_nodes(np.array([[0.5, 0.0]])).tolist() == [2]


def test_split_below_pruned_node_is_rejected():
    c, _ = _axis_tree()
    flags = dict(c.split_flags)
    flags[1] = False
    with pytest.raises(ModelFormatError):
        TreeClassifier(c.topology, {3: c.hyperplanes[3]}, flags, c.node_majority, c.leaf_class, c.class_names, c.feature_names)


def test_raw_inputs_are_scaled_and_clamped():
    d = normalize(from_labels([[0.0], [10.0]], ["lo", "hi"]))
    c = build_classifier(build_topology(1), {1: (np.array([1.0]), -0.5)}, d)
    assert c.predict_names([[-100.0], [4.9], [5.1], [1e6]]) == ["lo", "lo", "hi", "hi"]


def test_wrong_width_input():
    c, _ = _axis_tree()
    with pytest.raises(ValueError):
        c.predict([[0.1, 0.2, 0.3]])


def test_json_roundtrip(tmp_path):
    c, d = _axis_tree()
    f = tmp_path / "m.json"
    save(c, f)
    back = load(f)
    X = np.random.default_rng(0).random((50, 2))
    assert np.array_equal(back.predict(X), c.predict(X))
    assert to_document(back) == to_document(c)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda doc: doc.update(version=99),
        lambda doc: doc.update(format="other"),
        lambda doc: doc["branch_nodes"][0].pop("w"),
        lambda doc: doc.pop("leaves"),
        lambda doc: doc["branch_nodes"][0].update(w=[1.0]),
    ],
)
def test_bad_documents(mutate):
    c, _ = _axis_tree()
    doc = json.loads(json.dumps(to_document(c)))
    mutate(doc)
    with pytest.raises(ModelFormatError):
        from_document(doc)


def test_invalid_json(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text("{not json")
    with pytest.raises(ModelFormatError):
        load(f)


def test_prediction_csv(tmp_path):
    c, _ = _axis_tree()
    out = tmp_path / "p.csv"
    write_predictions(c, [[0.0, 0.0], [1.0, 1.0]], out)
    assert out.read_text().splitlines() == ["row,predicted", "0,a", "1,c"]


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_prediction_matches_manual_walk(seed, D):
    rng = np.random.default_rng(seed)
    X = rng.random((30, 3))
    d = normalize(from_labels(X, rng.integers(0, 3, 30).tolist()))
    topo = build_topology(D)
    hp = {t: (rng.normal(size=3), rng.normal() * 0.3) for t in topo.branch_nodes if rng.random() < 0.7}
    c = build_classifier(topo, hp, d)
    for z, pred in zip(d.X, c.predict(d.raw_X())):
        t = 1
        while topo.is_branch(t) and c.split_flags[t]:
            w, w0 = c.hyperplanes[t]
            t = 2 * t + int(z @ w + w0 > 0)
        assert pred == (c.leaf_class[t] if topo.is_leaf(t) else c.node_majority[t])


def _analytic(two_point):
    return build_classifier(build_topology(1), {1: (np.array([-2.0]), 1.0)}, two_point, leaf_class={2: 2, 3: 1})


def test_analytic_two_point_routes(two_point):
    c = _analytic(two_point)
    assert c.terminal_nodes(np.array([[0.0], [1.0]])).tolist() == [3, 2]
    assert accuracy(c, two_point) == 1.0


def test_analytic_roundtrip_on_probe_grid(two_point, tmp_path):
    c = _analytic(two_point)
    save(c, tmp_path / "a.json")
    probe = np.linspace(-0.5, 1.5, 100)[:, None]
    assert np.array_equal(load(tmp_path / "a.json").predict(probe), c.predict(probe))


def test_constant_classifier_on_balanced_data():
    d = normalize(from_labels([[0.0], [0.3], [0.6], [1.0]], ["a", "b", "a", "b"]))
    c = build_classifier(build_topology(2), {}, d)
    assert c.predict([[0.1], [0.9]]).tolist() == [1, 1]
    assert accuracy(c, d) == 0.5


def test_accuracy_rejects_empty(two_point):
    with pytest.raises(ValueError):
        accuracy(_analytic(two_point), two_point.subset([]))


def test_depth_three_document_rebuilds_topology():
    d = normalize(from_labels(np.random.default_rng(0).random((20, 2)), [i % 2 for i in range(20)]))
    c = build_classifier(build_topology(3), {1: (np.array([1.0, 0.0]), -0.5)}, d)
    back = from_document(json.loads(json.dumps(to_document(c))))
    assert back.topology.T == 15
    assert len(back.split_flags) + len(back.leaf_class) == 15
