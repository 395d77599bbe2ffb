"""Axis-parallel CART baseline with Gini impurity."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .classifier import TreeClassifier, build_classifier
from .dataset import Dataset
from .topology import build_topology


@dataclass(frozen=True)
class CartConfig:
    max_depth: int = 3
    min_leaf_fraction: float = 0.05
    max_active_nodes: Optional[int] = None  # None: grow until other rules stop

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.min_leaf_fraction < 1:
            raise ValueError("min_leaf_fraction must lie in (0, 1)")
        if self.max_active_nodes is not None and self.max_active_nodes < 0:
            raise ValueError("max_active_nodes must be >= 0")


def gini(counts) -> float:
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    tot = c.sum()
    if tot == 0:
        raise ValueError("gini impurity is undefined for an empty node")
    return float(1.0 - np.sum((c / tot) ** 2))


def best_split(X: np.ndarray, y: np.ndarray, K: int, min_leaf: int) -> Optional[tuple[float, int, float]]:
    """Lowest weighted child Gini over all features and midpoints.

    Returns ``(weighted_gini, feature, threshold)`` or None if no admissible
    split exists.  Ties go to the lower feature index, then the lower threshold.
    """
    n = y.size
    best = None
    onehot = np.eye(K)[y - 1]
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        left = np.cumsum(onehot[order], axis=0)[:-1]  # counts with i+1 points on the left
        nl = np.arange(1, n)
        right = left[-1] + onehot[order[-1]] - left
        nr = n - nl
        ok = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not ok.any():
            continue
        gl = 1.0 - np.sum(left ** 2, axis=1) / nl ** 2
        gr = 1.0 - np.sum(right ** 2, axis=1) / nr ** 2
        score = (nl * gl + nr * gr) / n
        score = np.where(ok, score, np.inf)
        i = int(np.argmin(score))
        if best is None or score[i] < best[0] - 1e-12:
            best = (float(score[i]), j, 0.5 * (xs[i] + xs[i + 1]))
    return best


def fit_cart(d: Dataset, cfg: CartConfig = CartConfig()) -> TreeClassifier:
    """Greedy CART grown best-first up to ``cfg.max_active_nodes`` splits.

    Without a node cap this is the usual depth-limited recursive growth.  The
    split at node ``t`` sends ``x_j > threshold`` to the right child, encoded
    as the hyperplane ``w = e_j, w0 = -threshold``.
    """
    if d.K < 2:
        raise ValueError("CART needs at least two classes")
    topo = build_topology(cfg.max_depth)
    min_leaf = max(1, math.ceil(cfg.min_leaf_fraction * d.n))
    cap = cfg.max_active_nodes if cfg.max_active_nodes is not None else len(topo.branch_nodes)
    X, y, K = d.X, d.y, d.K
    hyperplanes = {}
    frontier: list = []
    counter = 0

    def consider(t: int, idx: np.ndarray):
        nonlocal counter
        if not topo.is_branch(t) or idx.size < 2:
            return
        parent_gini = gini(np.bincount(y[idx] - 1, minlength=K))
        if parent_gini == 0.0:
            return
        found = best_split(X[idx], y[idx], K, min_leaf)
        if found is None or found[0] >= parent_gini - 1e-12:
            return
        gain = (parent_gini - found[0]) * idx.size
        heapq.heappush(frontier, (-gain, t, counter, idx, found))
        counter += 1

    consider(1, np.arange(d.n))
    while frontier and len(hyperplanes) < cap:
        _, t, _, idx, (_, j, thr) = heapq.heappop(frontier)
        w = np.zeros(d.p)
        w[j] = 1.0
        hyperplanes[t] = (w, -thr)
        right = X[idx, j] > thr
        consider(2 * t, idx[~right])
        consider(2 * t + 1, idx[right])
    return build_classifier(topo, hyperplanes, d, metadata={"method": "cart", "min_leaf": min_leaf})
