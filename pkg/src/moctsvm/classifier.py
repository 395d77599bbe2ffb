"""Deployable tree classifiers: extraction from solver output, prediction, JSON I/O."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Dataset, scale_features
from .topology import TreeTopology, build_topology

FORMAT_NAME = "moctsvm-tree"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TreeClassifier:
    topology: TreeTopology
    hyperplanes: dict  # t -> (w, w0) for split nodes only
    split_flags: dict  # t -> bool, every branch node
    node_majority: dict  # t -> class id, every node
    leaf_class: dict  # leaf t -> class id
    class_names: tuple
    feature_names: tuple
    normalization: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        topo = self.topology
        for t in topo.branch_nodes:
            if t not in self.split_flags:
                raise ModelFormatError(f"missing split flag for node {t}")
            if self.split_flags[t] != (t in self.hyperplanes):
                raise ModelFormatError(f"node {t}: a hyperplane must be present exactly when the node splits")
            if t > 1 and self.split_flags[t] and not self.split_flags[t // 2]:
                raise ModelFormatError(f"node {t} splits below a pruned node")
        for t in topo.leaf_nodes:
            if t not in self.leaf_class:
                raise ModelFormatError(f"missing class for leaf {t}")
        for t in topo.nodes:
            if t not in self.node_majority:
                raise ModelFormatError(f"missing majority class for node {t}")
        hp = {}
        for t, (w, w0) in self.hyperplanes.items():
            w = np.asarray(w, dtype=float)
            if w.shape != (self.p,):
                raise ModelFormatError(f"node {t}: hyperplane has {w.size} coefficients, expected {self.p}")
            hp[t] = (w, float(w0))
        object.__setattr__(self, "hyperplanes", hp)

    @property
    def p(self) -> int:
        return len(self.feature_names)

    @property
    def K(self) -> int:
        return len(self.class_names)

    @property
    def active_nodes(self) -> int:
        return sum(bool(v) for v in self.split_flags.values())

    def scaled(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} features, got {X.shape[1]}")
        return scale_features(X, self.normalization)

    def terminal_nodes(self, Z: np.ndarray) -> np.ndarray:
        """Node where each already-scaled row stops (pruned node or leaf)."""
        topo = self.topology
        node = np.ones(Z.shape[0], dtype=int)
        active = np.ones(Z.shape[0], dtype=bool)
        for t in topo.branch_nodes:  # increasing ids visit parents first
            at = active & (node == t)
            if not at.any():
                continue
            if not self.split_flags[t]:
                active[at] = False
                continue
            w, w0 = self.hyperplanes[t]
            right = Z[at] @ w + w0 > 0
            node[at] = 2 * t + right.astype(int)
        return node

    def predict(self, X) -> np.ndarray:
        """Class ids (1..K) for raw feature rows."""
        stop = self.terminal_nodes(self.scaled(X))
        return np.array([self._label_at(int(t)) for t in stop], dtype=int)

    def predict_one(self, x) -> int:
        return int(self.predict(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def predict_names(self, X) -> list[str]:
        return [self.class_names[k - 1] for k in self.predict(X)]

    def _label_at(self, t: int) -> int:
        if self.topology.is_leaf(t):
            return self.leaf_class[t]
        return self.node_majority[t]


def accuracy(c: TreeClassifier, d: Dataset) -> float:
    if d.n == 0:
        raise ValueError("accuracy is undefined on an empty dataset")
    if d.p != c.p:
        raise ValueError(f"dataset has {d.p} features, classifier expects {c.p}")
    return float(np.mean(c.predict(d.raw_X()) == d.y))


def routing_majorities(topo: TreeTopology, terminal_at, y: np.ndarray, K: int, prefer: dict | None = None) -> dict:
    """Majority class per node given each training point's node sequence.

    ``terminal_at(t)`` returns the indices of training points that visit node
    ``t``.  Nodes without points inherit their parent's majority.  On ties the
    class in ``prefer[t]`` wins if it is among the maxima, else the smallest id.
    """
    out = {}
    for t in topo.nodes:
        idx = terminal_at(t)
        if idx.size == 0:
            out[t] = out[t // 2] if t > 1 else 1
            continue
        counts = np.bincount(y[idx] - 1, minlength=K)
        best = int(np.argmax(counts)) + 1
        if prefer and t in prefer and counts[prefer[t] - 1] == counts[best - 1]:
            best = prefer[t]
        out[t] = best
    return out


def visits(c: TreeClassifier, Z: np.ndarray) -> dict:
    """Indices of rows visiting each node when every split is followed."""
    topo = c.topology
    out = {1: np.arange(Z.shape[0])}
    for t in topo.branch_nodes:
        idx = out[t]
        if c.split_flags[t]:
            w, w0 = c.hyperplanes[t]
            right = Z[idx] @ w + w0 > 0
        else:
            right = np.zeros(idx.size, dtype=bool)
        out[2 * t], out[2 * t + 1] = idx[~right], idx[right]
    return out


def build_classifier(
    topo: TreeTopology,
    hyperplanes: dict,
    d: Dataset,
    leaf_class: dict | None = None,
    metadata: dict | None = None,
) -> TreeClassifier:
    """Assemble a classifier from split hyperplanes and the (normalized) training data.

    ``hyperplanes`` maps split nodes to ``(w, w0)``; other branch nodes are
    pruned, as is everything beneath a pruned node.  Leaf classes default to
    the training majority.
    """
    flags = {}
    for t in topo.branch_nodes:
        flags[t] = t in hyperplanes and (t == 1 or flags[t // 2])
    hp = {t: hyperplanes[t] for t in topo.branch_nodes if flags[t]}
    skeleton = TreeClassifier(
        topo, hp, flags, {t: 1 for t in topo.nodes}, {t: 1 for t in topo.leaf_nodes}, d.class_names, d.feature_names
    )
    members = visits(skeleton, d.X)
    prefer = dict(leaf_class) if leaf_class else None
    maj = routing_majorities(topo, lambda t: members[t], d.y, d.K, prefer)
    leaves = {t: (leaf_class[t] if leaf_class and t in leaf_class else maj[t]) for t in topo.leaf_nodes}
    return TreeClassifier(
        topo, hp, flags, maj, leaves, d.class_names, d.feature_names, d.normalization, dict(metadata or {})
    )


def extract_tree(r, d: Dataset, topo: TreeTopology, model=None) -> TreeClassifier:
    """Classifier encoded by a solver incumbent.

    ``model`` supplies the variable layout; by default it is rebuilt from the
    result's own model reference.
    """
    x = getattr(r, "incumbent", None)
    if x is None:
        raise ValueError("the solve result has no incumbent to extract")
    m = model if model is not None else getattr(r, "model", None)
    if m is None or m.layout is None:
        raise ValueError("extract_tree needs the model the result was solved on")
    lay = m.layout
    hyperplanes = {}
    for t in topo.branch_nodes:
        if x[lay.d[t]] > 0.5:
            hyperplanes[t] = (np.array(x[lay.w[t]], dtype=float), float(x[lay.w0[t]]))
    leaf_class = {}
    for t in topo.leaf_nodes:
        ks = [x[lay.q[k, t]] for k in range(1, lay.K + 1)]
        leaf_class[t] = int(np.argmax(ks)) + 1
    meta = {
        "status": r.status,
        "objective": r.objective,
        "gap": r.gap,
    }
    if m.costs is not None:
        meta["costs"] = {"c1": m.costs.c1, "c2": m.costs.c2, "c3": m.costs.c3}
    return build_classifier(topo, hyperplanes, d, leaf_class, meta)


# ----------------------------------------------------------------------
# persistence


def to_document(c: TreeClassifier) -> dict:
    topo = c.topology
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "depth": topo.D,
        "feature_names": list(c.feature_names),
        "class_names": list(c.class_names),
        "normalization": None if c.normalization is None else np.asarray(c.normalization).tolist(),
        "branch_nodes": [
            {
                "id": t,
                "split": bool(c.split_flags[t]),
                "majority": int(c.node_majority[t]),
                **(
                    {"w": c.hyperplanes[t][0].tolist(), "w0": c.hyperplanes[t][1]}
                    if c.split_flags[t]
                    else {}
                ),
            }
            for t in topo.branch_nodes
        ],
        "leaves": [
            {"id": t, "class": int(c.leaf_class[t]), "majority": int(c.node_majority[t])} for t in topo.leaf_nodes
        ],
        "metadata": c.metadata,
    }


def from_document(doc: dict) -> TreeClassifier:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFormatError("not a tree model document")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r} (expected {FORMAT_VERSION})")
    try:
        topo = build_topology(int(doc["depth"]))
        flags, hp, maj, leaves = {}, {}, {}, {}
        for node in doc["branch_nodes"]:
            t = int(node["id"])
            flags[t] = bool(node["split"])
            maj[t] = int(node["majority"])
            if flags[t]:
                if "w" not in node or "w0" not in node:
                    raise ModelFormatError(f"split node {t} has no hyperplane")
                hp[t] = (np.array(node["w"], dtype=float), float(node["w0"]))
        for node in doc["leaves"]:
            t = int(node["id"])
            leaves[t] = int(node["class"])
            maj[t] = int(node["majority"])
        norm = doc.get("normalization")
        return TreeClassifier(
            topo,
            hp,
            flags,
            maj,
            leaves,
            tuple(doc["class_names"]),
            tuple(doc["feature_names"]),
            None if norm is None else np.array(norm, dtype=float),
            dict(doc.get("metadata") or {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {exc}") from exc


def save(c: TreeClassifier, path) -> None:
    Path(path).write_text(json.dumps(to_document(c), indent=2, sort_keys=True, default=_json_default))


def load(path) -> TreeClassifier:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc})") from exc
    return from_document(doc)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_predictions(c: TreeClassifier, X, path) -> None:
    """CSV with one row per input: 0-based row index and predicted class name."""
    names = c.predict_names(X)
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["row", "predicted"])
        for i, name in enumerate(names):
            wr.writerow([i, name])
