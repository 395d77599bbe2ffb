"""Starting incumbents for the tree model.

Two families of trees are generated and then pruned in every admissible way:

* greedy SVM trees: each node tries every bipartition of the classes it
  holds, fits a soft-margin hyperplane for that grouping and keeps the one
  whose children have the lowest weighted Gini impurity;
* the CART tree of the same depth, whose axis splits become hyperplanes.

Each candidate is routed, polished (optimal continuous part for its binaries)
and scored with the model objective.
"""
from __future__ import annotations

import itertools
from typing import Optional

import numpy as np

from .bnb import assignment_from_tree, polish_continuous, solve_split_lp
from .baseline_cart import CartConfig, fit_cart
from .formulation import MiqpModel, ModelOptions, check_feasible
from .topology import TreeTopology

MAX_BIPARTITIONS = 15


def class_bipartitions(classes) -> list[tuple[int, ...]]:
    """Positive-side class groups, one per unordered bipartition.

    For more than five classes only one-vs-rest groupings are returned.
    """
    classes = sorted(int(k) for k in classes)
    if len(classes) < 2:
        return []
    if len(classes) > 5:
        return [(k,) for k in classes]
    head, rest = classes[0], classes[1:]
    out = []
    for r in range(len(rest) + 1):
        for combo in itertools.combinations(rest, r):
            neg = (head,) + combo
            pos = tuple(k for k in classes if k not in neg)
            if pos:
                out.append(pos)
    return out[:MAX_BIPARTITIONS]


def _weighted_gini(y: np.ndarray, right: np.ndarray, K: int) -> float:
    total = 0.0
    for side in (right, ~right):
        if side.any():
            c = np.bincount(y[side] - 1, minlength=K)
            total += side.sum() * (1.0 - np.sum((c / side.sum()) ** 2))
    return total / y.size


def greedy_svm_tree(m: MiqpModel) -> tuple[dict, dict]:
    lay = m.layout
    topo = lay.topo
    X, y, K = m.data.X, m.data.y, lay.K
    opts = m.options or ModelOptions()
    W = {t: np.zeros(lay.p) for t in topo.branch_nodes}
    W0 = {t: -1.0 for t in topo.branch_nodes}
    members = {1: np.arange(lay.n)}
    for t in topo.branch_nodes:
        idx = members.get(t, np.zeros(0, dtype=int))
        right = np.zeros(idx.size, dtype=bool)
        present = np.unique(y[idx])
        if present.size >= 2:
            best = None
            for pos in class_bipartitions(present):
                lab = np.isin(y[idx], pos)
                res = solve_split_lp(
                    [(X[idx][lab], X[idx][~lab])], m.costs.c2, opts.omega_bound, None, tol=1e-6, max_rounds=100
                )
                if res.status != "optimal":
                    continue
                s = X[idx] @ res.W[0] + res.W0[0]
                r = s > 0
                if r.all() or not r.any():
                    continue
                score = _weighted_gini(y[idx], r, K)
                if best is None or score < best[0] - 1e-12:
                    best = (score, res.W[0], res.W0[0], r)
            if best is not None:
                _, W[t], W0[t], right = best
        members[2 * t], members[2 * t + 1] = idx[~right], idx[right]
    return W, W0


def cart_tree(m: MiqpModel) -> tuple[dict, dict]:
    topo = m.layout.topo
    c = fit_cart(m.data, CartConfig(max_depth=topo.D, min_leaf_fraction=1.0 / (2 * m.layout.n + 1)))
    W = {t: np.zeros(m.layout.p) for t in topo.branch_nodes}
    W0 = {t: -1.0 for t in topo.branch_nodes}
    for t, (w, w0) in c.hyperplanes.items():
        W[t], W0[t] = w, w0
    return W, W0


def prunings(topo: TreeTopology) -> list[frozenset]:
    """All downward-closed sets of split nodes (each node's parent also splits)."""
    out = []

    def grow(kept: frozenset, frontier: tuple):
        if not frontier:
            out.append(kept)
            return
        t, rest = frontier[0], frontier[1:]
        grow(kept, rest)
        kids = tuple(c for c in (2 * t, 2 * t + 1) if topo.is_branch(c))
        grow(kept | {t}, rest + kids)

    grow(frozenset(), (1,))
    return out


def merge_redundant(m: MiqpModel, W: dict, W0: dict) -> tuple[dict, dict]:
    """Prune splits whose two children predict the same class.

    Merging never increases misclassification and removes a split cost.
    """
    W, W0 = dict(W), dict(W0)
    topo = m.layout.topo
    X, y, K = m.data.X, m.data.y, m.layout.K
    changed = True
    while changed:
        changed = False
        members = {1: np.arange(m.layout.n)}
        stops = {}
        dead = set()
        for t in topo.nodes:
            if t in dead:
                if topo.is_branch(t):
                    dead.update((2 * t, 2 * t + 1))
                continue
            idx = members[t]
            if topo.is_leaf(t) or not np.any(W[t]):
                stops[t] = idx
                if topo.is_branch(t):
                    dead.update((2 * t, 2 * t + 1))
                continue
            r = X[idx] @ W[t] + W0[t] > 0
            members[2 * t], members[2 * t + 1] = idx[~r], idx[r]
        for t in reversed(topo.branch_nodes):
            if not np.any(W[t]):
                continue
            kids = (2 * t, 2 * t + 1)
            if all(k in stops for k in kids):
                labels = []
                for k in kids:
                    idx = stops[k]
                    labels.append(int(np.argmax(np.bincount(y[idx] - 1, minlength=K))) + 1 if idx.size else None)
                if None in labels or labels[0] == labels[1]:
                    W[t], W0[t] = np.zeros_like(W[t]), -1.0
                    changed = True
                    break
    return W, W0


def candidate_trees(m: MiqpModel) -> list[tuple[dict, dict]]:
    topo = m.layout.topo
    bases = []
    for build in (greedy_svm_tree, cart_tree):
        try:
            bases.append(build(m))
        except (ValueError, RuntimeError):
            continue
    out = []
    for W, W0 in bases:
        for keep in prunings(topo):
            Wk = {t: (W[t] if t in keep else np.zeros_like(W[t])) for t in topo.branch_nodes}
            W0k = {t: (W0[t] if t in keep else -1.0) for t in topo.branch_nodes}
            out.append(merge_redundant(m, Wk, W0k))
    return out


def starting_incumbents(m: MiqpModel, limit: int = 3) -> list[np.ndarray]:
    """Best few polished candidate valuations, best first."""
    scored = []
    seen = set()
    for W, W0 in candidate_trees(m):
        x = assignment_from_tree(m, W, W0)
        if x is None or check_feasible(m, x):
            continue
        key = np.packbits(x[m.binary_mask] > 0.5).tobytes()
        if key in seen:
            continue
        seen.add(key)
        pol = polish_continuous(m, x, tol=1e-7)
        if pol is None:
            continue
        xp, upper, _ = pol
        if check_feasible(m, xp):
            continue
        scored.append((upper, len(scored), xp))
    scored.sort(key=lambda s: (s[0], s[1]))
    return [s[2] for s in scored[:limit]]


def best_start(m: MiqpModel) -> Optional[np.ndarray]:
    starts = starting_incumbents(m, limit=1)
    return starts[0] if starts else None
