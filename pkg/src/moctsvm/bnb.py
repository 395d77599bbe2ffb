"""LP-based branch-and-bound with outer-approximation cuts for the tree model.

The quadratic margin rows ``delta >= 0.5 ||w_t||^2`` are never handed to the
LP directly.  Each relaxation is an LP; whenever its solution violates a
margin row, the tangent plane at the offending ``w_t`` is appended as a cut.
The tangents are globally valid, so cuts are shared by all nodes.
"""
from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import lp as lpmod
from .dataset import Dataset
from .formulation import (
    CostConfig,
    MiqpModel,
    ModelOptions,
    build_model,
    check_feasible,
)
from .topology import TreeTopology, build_topology

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
FEASIBLE_LIMIT = "feasible_time_limit"
INFEASIBLE = "infeasible"
NO_INCUMBENT_LIMIT = "no_incumbent_time_limit"

FAMILY_ORDER = ("d", "q", "z", "alpha", "h", "v")
# Simplex pivots standing in for one second of search in deterministic mode
# (measured at roughly 600-1400 pivots per second on desk-scale tree models).
WORK_PER_SECOND = 1_000


@dataclass(frozen=True)
class BnbConfig:
    time_limit: float = 300.0
    gap_tolerance: float = 1e-6
    oa_tolerance: float = 1e-7
    max_oa_rounds_per_node: int = 8
    node_limit: int = 1_000_000
    branching_priority: tuple[str, ...] = FAMILY_ORDER
    # families branched on while any member is unfixed, even at an integral LP value
    structural_families: tuple[str, ...] = ("d",)
    deterministic: bool = True
    work_limit: Optional[int] = None  # simplex pivots; default time_limit * WORK_PER_SECOND
    heuristic_every: int = 1
    log_nodes: bool = False

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if not (self.gap_tolerance > 0 and self.oa_tolerance > 0):
            raise ValueError("tolerances must be positive")
        unknown = (set(self.branching_priority) | set(self.structural_families)) - set(FAMILY_ORDER)
        if unknown:
            raise ValueError(f"unknown variable families {sorted(unknown)}")

    @property
    def effective_work_limit(self) -> int:
        if self.work_limit is not None:
            return int(self.work_limit)
        return int(self.time_limit * WORK_PER_SECOND)


@dataclass
class SolveResult:
    status: str
    incumbent: Optional[np.ndarray]
    objective: float
    best_bound: float
    gap: float
    nodes_explored: int
    cuts_added: int
    wall_time: float
    lp_iterations: int = 0
    cuts: list = field(default_factory=list, repr=False)  # (node t, tangent point)
    log_lines: list = field(default_factory=list, repr=False)

    def summary(self, include_time: bool = True) -> dict:
        out = {
            "status": self.status,
            "objective": self.objective,
            "best_bound": self.best_bound,
            "gap": self.gap,
            "nodes_explored": self.nodes_explored,
            "cuts_added": self.cuts_added,
            "lp_iterations": self.lp_iterations,
        }
        if include_time:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, include_time: bool = True) -> str:
        return json.dumps(self.summary(include_time), sort_keys=True)


def relative_gap(obj: float, bound: float) -> float:
    if not math.isfinite(obj):
        return math.inf
    diff = max(obj - bound, 0.0)
    if diff <= 1e-12:
        return 0.0
    return diff / max(abs(obj), 1e-9)


# ----------------------------------------------------------------------
# outer approximation


def oa_separate(omega_star, delta_star: float, tol: float = 1e-7) -> Optional[tuple[np.ndarray, float]]:
    """Tangent cut for ``delta >= 0.5 ||w||^2`` at ``w = omega_star``.

    Returns ``(g, r)`` meaning ``delta - g'w >= r`` with ``g = omega_star`` and
    ``r = -0.5 ||omega_star||^2``, or None when the point is within ``tol``.
    """
    w = np.asarray(omega_star, dtype=float)
    val = 0.5 * float(w @ w)
    if val <= delta_star + tol:
        return None
    return w.copy(), -val


# ----------------------------------------------------------------------
# continuous part for fixed binaries


@dataclass
class SplitLpResult:
    status: str
    W: np.ndarray
    W0: np.ndarray
    errors: list  # per block: (e_pos, e_neg)
    delta: float
    lower: float  # LP value (valid lower bound)
    upper: float  # value with delta recomputed exactly
    rounds: int


def solve_split_lp(
    blocks: Sequence[tuple[np.ndarray, np.ndarray]],
    c2: float,
    omega_bound: float,
    e_cap: Optional[float],
    tol: float = 1e-7,
    max_rounds: int = 300,
) -> SplitLpResult:
    """Soft-margin hyperplanes for fixed fictitious classes, jointly over nodes.

    ``blocks[b] = (X_pos, X_neg)`` holds the points that must satisfy
    ``w'x + w0 >= 1 - e`` and ``w'x + w0 <= -1 + e`` respectively.  Minimizes
    ``max_b 0.5||w_b||^2 + c2 * sum(e)`` by LP plus tangent cuts.
    """
    nb = len(blocks)
    p = blocks[0][0].shape[1] if nb else 0
    sizes = [bp.shape[0] + bn.shape[0] for bp, bn in blocks]
    ne = int(sum(sizes))
    nv = nb * (p + 1) + ne + 1
    di = nv - 1
    lo = np.empty(nv)
    hi = np.empty(nv)
    lo[: nb * (p + 1)] = -omega_bound
    hi[: nb * (p + 1)] = omega_bound
    lo[nb * (p + 1): di] = 0.0
    hi[nb * (p + 1): di] = e_cap if e_cap is not None else 2.0 * omega_bound * (p + 1) + 2.0
    lo[di] = 0.0
    hi[di] = 0.5 * p * omega_bound ** 2
    c = np.zeros(nv)
    c[nb * (p + 1): di] = c2
    c[di] = 1.0
    rows_i, rows_j, vals, senses, rhs = [], [], [], [], []
    r = 0
    ecol = nb * (p + 1)
    for b, (Xp, Xn) in enumerate(blocks):
        base = b * (p + 1)
        for X, sgn in ((Xp, 1.0), (Xn, -1.0)):
            for x in X:
                # sgn * (w'x + w0) + e >= 1
                rows_i.extend([r] * (p + 2))
                rows_j.extend(list(range(base, base + p + 1)) + [ecol])
                vals.extend(list(sgn * x) + [sgn, 1.0])
                senses.append(">=")
                rhs.append(1.0)
                r += 1
                ecol += 1
    A = sp.csr_matrix((vals, (rows_i, rows_j)), shape=(r, nv))
    if nb == 0:
        return SplitLpResult("optimal", np.zeros((0, p)), np.zeros(0), [], 0.0, 0.0, 0.0, 0)
    eng = lpmod.DualSimplex(c, A, senses, rhs, lo, hi)
    rounds = 0
    while True:
        st = eng.solve()
        if st != lpmod.OPTIMAL:
            return SplitLpResult(st, None, None, [], math.nan, math.inf, math.inf, rounds)
        x = eng.primal()
        W = np.array([x[b * (p + 1): b * (p + 1) + p] for b in range(nb)])
        cut_rows = []
        for b in range(nb):
            cut = oa_separate(W[b], x[di], tol * (1.0 + x[di]))
            if cut is not None:
                g, rr = cut
                row = np.zeros(nv)
                row[di] = 1.0
                row[b * (p + 1): b * (p + 1) + p] = -g
                cut_rows.append((row, rr))
        if not cut_rows or rounds >= max_rounds:
            break
        eng.add_rows(np.array([cr[0] for cr in cut_rows]), [">="] * len(cut_rows), [cr[1] for cr in cut_rows])
        rounds += 1
    lower = float(c @ x)
    W0 = np.array([x[b * (p + 1) + p] for b in range(nb)])
    e = x[nb * (p + 1): di]
    errors = []
    off = 0
    for Xp, Xn in blocks:
        errors.append((e[off: off + len(Xp)], e[off + len(Xp): off + len(Xp) + len(Xn)]))
        off += len(Xp) + len(Xn)
    delta = max(0.5 * float(w @ w) for w in W)
    upper = delta + c2 * float(e.sum())
    return SplitLpResult("optimal", W, W0, errors, delta, lower, upper, rounds)


def _binary_structure(m: MiqpModel, x: np.ndarray):
    """Routing encoded in integral z/alpha: per-branch-node (pos, neg) index sets."""
    lay = m.layout
    topo = lay.topo
    out = {}
    for t in topo.branch_nodes:
        if x[lay.d[t]] < 0.5:
            continue
        inside = x[lay.z[:, t]] > 0.5
        pos = np.nonzero(inside & (x[lay.alpha[:, t]] > 0.5))[0]
        neg = np.nonzero(inside & (x[lay.alpha[:, t]] < 0.5))[0]
        out[t] = (pos, neg)
    return out


def polish_continuous(m: MiqpModel, x: np.ndarray, tol: float = 1e-7) -> Optional[tuple[np.ndarray, float, float]]:
    """Optimal hyperplanes, hinge errors and ``delta`` for the binaries in ``x``.

    Only split nodes (``d = 1``) carry a hyperplane; pruned or empty nodes get
    ``w = 0`` and ``w0 = +-1`` on the side all their points share, which
    costs nothing.  Returns ``(valuation, upper, lower)`` or None when the
    fixed routing cannot be realized (e.g. not separable within the caps).
    """
    lay = m.layout
    topo = lay.topo
    X = m.data.X
    opts = m.options or ModelOptions()
    costs = m.costs
    x = np.array(x, dtype=float)
    binm = m.binary_mask
    x[binm] = np.round(x[binm])
    struct = _binary_structure(m, x)
    nodes = sorted(struct)
    blocks = [(X[struct[t][0]], X[struct[t][1]]) for t in nodes]
    e_cap = 1.0 - opts.route_margin
    res = solve_split_lp(blocks, costs.c2, opts.omega_bound, e_cap, tol=tol)
    if res.status != lpmod.OPTIMAL:
        return None
    x[lay.e[:, list(topo.branch_nodes)]] = 0.0
    for t in topo.branch_nodes:
        if t in struct:
            b = nodes.index(t)
            x[lay.w[t]] = res.W[b]
            x[lay.w0[t]] = res.W0[b]
            pos, neg = struct[t]
            x[lay.e[pos, t]] = res.errors[b][0]
            x[lay.e[neg, t]] = res.errors[b][1]
        else:
            inside = x[lay.z[:, t]] > 0.5
            any_pos = bool(np.any(x[lay.alpha[inside, t]] > 0.5))
            x[lay.w[t]] = 0.0
            x[lay.w0[t]] = 1.0 if any_pos else -1.0
    x[lay.delta] = res.delta
    _set_leaf_errors(m, x)
    upper = float(m.objective @ x)
    lower = upper - res.upper + res.lower
    return x, upper, lower


def _set_leaf_errors(m: MiqpModel, x: np.ndarray):
    lay = m.layout
    y = m.data.y
    for t in lay.topo.leaf_nodes:
        inside = x[lay.z[:, t]] > 0.5
        k = int(np.argmax([x[lay.q[kk, t]] for kk in range(1, lay.K + 1)])) + 1
        x[lay.L[t]] = float(np.sum(inside & (y != k)))


# ----------------------------------------------------------------------
# incumbent construction


def leaf_classes(m: MiqpModel, members: dict, split: dict) -> Optional[dict]:
    """Class per leaf: majority (smallest id on ties), repaired for VI2/VI5 rows."""
    lay = m.layout
    topo = lay.topo
    y = m.data.y
    K = lay.K
    counts = {t: np.bincount(y[members[t]] - 1, minlength=K) for t in topo.leaf_nodes}
    cls = {t: int(np.argmax(counts[t])) + 1 for t in topo.leaf_nodes}
    if "VI5" in m.families and K <= len(topo.leaf_nodes):
        # empty leaves first take classes that no leaf represents yet
        for t in topo.leaf_nodes:
            if counts[t].sum() == 0:
                missing = sorted(set(range(1, K + 1)) - set(cls.values()) | set())
                used = [cls[u] for u in topo.leaf_nodes if u != t]
                missing = [k for k in range(1, K + 1) if k not in used]
                if missing:
                    cls[t] = missing[0]
    if "VI2" in m.families:
        for t in topo.leaf_nodes[::2]:
            s = t + 1
            if split.get(t // 2, False) and cls[t] == cls[s]:
                # move the leaf whose second choice costs least
                best = None
                for u in (t, s):
                    order = np.argsort(-counts[u], kind="stable")
                    alt = int(order[1]) + 1 if order[0] + 1 == cls[u] else int(order[0]) + 1
                    loss = counts[u][cls[u] - 1] - counts[u][alt - 1]
                    if best is None or loss < best[0]:
                        best = (loss, u, alt)
                cls[best[1]] = best[2]
    return cls


def assignment_from_tree(m: MiqpModel, W: np.ndarray, W0: np.ndarray) -> Optional[np.ndarray]:
    """Integral valuation realizing the tree with hyperplanes ``W[t], W0[t]``.

    Observations descend by the sign of ``w_t'x + w0_t`` (right when > 0).
    A node whose points all fall on one side is pruned, and so is everything
    below it (points then follow left branches down to a leaf).
    """
    lay = m.layout
    topo = lay.topo
    X = m.data.X
    opts = m.options or ModelOptions()
    eta = opts.route_margin
    Om = opts.omega_bound
    x = np.zeros(m.num_vars)
    members = {1: np.arange(lay.n)}
    split = {}
    pruned_above = {1: False}
    for t in topo.branch_nodes:
        idx = members[t]
        w, w0 = np.array(W[t], dtype=float), float(W0[t])
        s = X[idx] @ w + w0 if idx.size else np.zeros(0)
        right = s > 0
        effective = (not pruned_above[t]) and idx.size > 0 and 0 < right.sum() < idx.size
        if effective:
            smin = float(np.min(np.abs(s)))
            if smin < eta:
                if smin <= 0:
                    return None
                lam = eta / smin * (1 + 1e-9)
                if lam * max(np.max(np.abs(w)), abs(w0)) > Om:
                    return None
                w, w0, s = w * lam, w0 * lam, s * lam
            split[t] = True
            x[lay.w[t]] = w
            x[lay.w0[t]] = w0
            alpha = right.astype(float)
            err = np.where(right, np.maximum(0.0, 1.0 - s), np.maximum(0.0, 1.0 + s))
            x[lay.e[idx, t]] = err
            x[lay.d[t]] = 1.0
            x[lay.v[t]] = 1.0
        else:
            split[t] = False
            right = np.zeros(idx.size, dtype=bool) if (pruned_above[t] or not idx.size or right.sum() < idx.size) else right
            all_right = idx.size > 0 and bool(right.all())
            alpha = right.astype(float)
            x[lay.w[t]] = 0.0
            x[lay.w0[t]] = 1.0 if all_right else -1.0
            x[lay.v[t]] = 0.0 if all_right else 1.0
        x[lay.alpha[idx, t]] = alpha
        x[lay.h[idx, t]] = alpha
        x[lay.z[idx, t]] = 1.0
        left_c, right_c = topo.children(t)
        members[left_c] = idx[~right]
        members[right_c] = idx[right]
        pruned_above[left_c] = pruned_above[right_c] = pruned_above[t] or not split[t]
    for t in topo.leaf_nodes:
        x[lay.z[members[t], t]] = 1.0
    cls = leaf_classes(m, members, split)
    for t in topo.leaf_nodes:
        x[lay.q[cls[t], t]] = 1.0
    _set_leaf_errors(m, x)
    ws = [0.5 * float(x[lay.w[t]] @ x[lay.w[t]]) for t in topo.branch_nodes]
    x[lay.delta] = max(ws)
    return x


def round_incumbent(m: MiqpModel, fractional: np.ndarray, d: Dataset | None = None, topo: TreeTopology | None = None) -> Optional[np.ndarray]:
    """Route by the (possibly fractional) hyperplanes and return a feasible valuation.

    An already integral feasible valuation is returned unchanged.
    """
    lay = m.layout
    fractional = np.asarray(fractional, dtype=float)
    binm = m.binary_mask
    if np.all(np.abs(fractional[binm] - np.round(fractional[binm])) <= 1e-9) and not check_feasible(m, fractional):
        return fractional.copy()
    W = {t: fractional[lay.w[t]] for t in lay.topo.branch_nodes}
    W0 = {t: fractional[lay.w0[t]] for t in lay.topo.branch_nodes}
    x = assignment_from_tree(m, W, W0)
    if x is None or check_feasible(m, x):
        return None
    return x


def binary_signature(m: MiqpModel, x: np.ndarray) -> bytes:
    return np.packbits(x[m.binary_mask] > 0.5).tobytes()


# ----------------------------------------------------------------------
# branch and bound


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    depth: int = field(compare=False)
    fixes: tuple = field(compare=False, default=())  # ((var, lb, ub), ...)
    basis: Optional[tuple] = field(compare=False, default=None)  # parent's final basis


class _Search:
    def __init__(self, m: MiqpModel, cfg: BnbConfig, starts: Sequence[np.ndarray], log_sink: Optional[Callable[[str], None]]):
        self.m = m
        self.cfg = cfg
        self.t0 = time.monotonic()
        self.deadline = None if cfg.deterministic else self.t0 + cfg.time_limit
        self.work_limit = cfg.effective_work_limit if cfg.deterministic else None
        A = m.matrix.tocsc()
        self.root_lb = m.lower.copy()
        self.root_ub = m.upper.copy()
        self.eng = lpmod.DualSimplex(m.objective, A, m.senses, m.rhs, self.root_lb, self.root_ub, tol=1e-7, perturb=1e-6)
        self.m0 = len(m.rows)
        self.row_generation = 0  # bumped whenever cut rows are purged
        self.cold_pivots: Optional[int] = None  # root solve length, sets the warm-start patience
        self.restarts = 0
        self.cut_meta: list[tuple[int, np.ndarray]] = []  # per engine row beyond m0
        self.all_cuts: list[tuple[int, np.ndarray]] = []
        self.inc_x: Optional[np.ndarray] = None
        self.inc_obj = math.inf
        self.seen: set = set()
        self.nodes = 0
        self.log_sink = log_sink
        self.log_lines: list[str] = []
        self.branch_nodes = {}
        lay = m.layout
        if lay is not None:
            self.ep_node = {k: t for k, t in enumerate(lay.topo.branch_nodes)}
        else:
            self.ep_node = {k: k for k in range(len(m.epigraphs))}
        self.families = self._family_ids(self.cfg.branching_priority)
        self.structural = self._family_ids(self.cfg.structural_families) if m.layout is not None else []
        for s in starts:
            self._offer(s, "start")

    # -- bookkeeping -------------------------------------------------

    def _family_ids(self, order) -> list[np.ndarray]:
        lay = self.m.layout
        binm = self.m.binary_mask
        if lay is None:
            return [np.nonzero(binm)[0]]
        topo = lay.topo
        fam = {
            "d": lay.d[list(topo.branch_nodes)],
            "v": lay.v[list(topo.branch_nodes)],
            "q": lay.q[1:, list(topo.leaf_nodes)].ravel(),
            "z": lay.z[:, list(topo.nodes)].ravel(),
            "alpha": lay.alpha[:, list(topo.branch_nodes)].ravel(),
            "h": lay.h[:, list(topo.branch_nodes)].ravel(),
        }
        return [np.asarray(fam[f]) for f in order]

    def out_of_budget(self) -> bool:
        if self.nodes >= self.cfg.node_limit:
            return True
        if self.work_limit is not None and self.eng.iterations >= self.work_limit:
            return True
        if self.deadline is not None and time.monotonic() > self.deadline:
            return True
        return False

    def _lp_budget(self) -> int:
        if self.work_limit is None:
            return 1_000_000
        return max(self.work_limit - self.eng.iterations, 1)

    def _offer(self, x: Optional[np.ndarray], source: str) -> bool:
        """Polish and accept an integral valuation if it improves the incumbent."""
        if x is None or self.m.layout is None:
            return False
        sig = binary_signature(self.m, x)
        if sig in self.seen:
            return False
        self.seen.add(sig)
        pol = polish_continuous(self.m, x, tol=self.cfg.oa_tolerance)
        if pol is None:
            return False
        xp, upper, _ = pol
        if check_feasible(self.m, xp):
            return False
        if upper < self.inc_obj - 1e-12:
            self.inc_obj = upper
            self.inc_x = xp
            self._log(f"incumbent {upper:.9g} from {source}")
            self._tangents_at(xp)
            return True
        return False

    def _tangents_at(self, x: np.ndarray):
        rows = []
        for k, ep in enumerate(self.m.epigraphs):
            w = x[list(ep.vars)]
            if np.any(w != 0):
                rows.append((k, w))
        self._add_cuts(rows)

    def _add_cuts(self, cuts: list[tuple[int, np.ndarray]]):
        if not cuts:
            return
        nvar = self.m.num_vars
        data, ri, ci, rhs = [], [], [], []
        for r, (k, w) in enumerate(cuts):
            ep = self.m.epigraphs[k]
            ri.append(r)
            ci.append(ep.delta)
            data.append(1.0)
            for j, wj in zip(ep.vars, w):
                ri.append(r)
                ci.append(j)
                data.append(-float(wj))
            rhs.append(-0.5 * float(w @ w))
        R = sp.csr_matrix((data, (ri, ci)), shape=(len(cuts), nvar))
        self.eng.add_rows(R, [">="] * len(cuts), rhs)
        for k, w in cuts:
            self.cut_meta.append((k, w.copy()))
            self.all_cuts.append((self.ep_node[k], w.copy()))
        if len(self.cut_meta) > 400:
            self._purge_cuts()

    def _purge_cuts(self):
        # drop inactive cuts (basic slack) to keep the basis small
        rows = [self.m0 + r for r in range(len(self.cut_meta))]
        removed = set(self.eng.remove_rows(rows[: len(rows) // 2]))
        self.row_generation += 1
        self.cut_meta = [c for r, c in enumerate(self.cut_meta) if (self.m0 + r) not in removed]

    def _log(self, line: str):
        self.log_lines.append(line)
        if self.log_sink is not None:
            self.log_sink(line)
        log.debug(line)

    # -- node processing ---------------------------------------------

    def _snapshot(self) -> tuple:
        return (self.row_generation, self.eng.m) + self.eng.get_basis()

    def _restore(self, snap: tuple):
        """Reinstall a stored basis; rows added since get basic slacks."""
        gen, m_old, basic, status = snap
        eng = self.eng
        if gen != self.row_generation or m_old > eng.m:
            return
        extra = np.arange(eng.n + m_old, eng.n + eng.m)
        status = np.concatenate([status, np.full(extra.size, lpmod.BASIC, dtype=np.int8)])
        if not eng.set_basis((np.concatenate([basic, extra]), status)):
            eng.reset_basis()

    def _apply(self, node: _Node):
        lb = self.root_lb.copy()
        ub = self.root_ub.copy()
        for j, lo, hi in node.fixes:
            lb[j], ub[j] = lo, hi
        self.eng.set_all_bounds(lb, ub)

    def _separate(self, x: np.ndarray) -> list[tuple[int, np.ndarray]]:
        cuts = []
        for k, ep in enumerate(self.m.epigraphs):
            w = x[list(ep.vars)]
            dstar = x[ep.delta]
            if oa_separate(w, dstar, self.cfg.oa_tolerance * (1.0 + abs(dstar))) is not None:
                cuts.append((k, w))
        return cuts

    def _fractional(self, x: np.ndarray) -> Optional[int]:
        for ids in self.families:
            if ids.size == 0:
                continue
            vals = x[ids]
            frac = np.abs(vals - np.round(vals))
            free = self.eng.lb[ids] < self.eng.ub[ids]
            frac = np.where(free, frac, 0.0)
            if np.any(frac > 1e-6):
                score = np.minimum(vals - np.floor(vals), np.ceil(vals) - vals)
                score = np.where(free & (frac > 1e-6), score, -1.0)
                return int(ids[int(np.argmax(score))])
        return None

    def _structural(self) -> Optional[int]:
        for ids in self.structural:
            free = ids[self.eng.lb[ids] < self.eng.ub[ids]]
            if free.size:
                return int(free[0])
        return None

    def _unfixed_binary(self) -> Optional[int]:
        for ids in self.families:
            free = ids[self.eng.lb[ids] < self.eng.ub[ids]]
            if free.size:
                return int(free[0])
        return None

    def evaluate(self, node: _Node):
        """Solve a node relaxation; returns (status, bound, x)."""
        self._apply(node)
        rounds = 0
        cutoff = self._cutoff()
        while True:
            st = self._solve_lp(cutoff)
            if st in (lpmod.INFEASIBLE, lpmod.CUTOFF):
                return st, math.inf, None
            if st != lpmod.OPTIMAL:
                return st, node.bound, None
            x = self.eng.primal()
            cuts = self._separate(x)
            integral = self._fractional(x) is None
            if not cuts:
                break
            if rounds >= self.cfg.max_oa_rounds_per_node and not integral:
                break
            if rounds >= 20 * self.cfg.max_oa_rounds_per_node:
                break
            self._add_cuts(cuts)
            rounds += 1
            if self.out_of_budget():
                return lpmod.TIME_LIMIT, node.bound, None
        return lpmod.OPTIMAL, max(self.eng.objective(), node.bound), x

    def _solve_lp(self, cutoff: float) -> str:
        """Warm-started solve; a warm start that runs long is retried from the slack basis."""
        budget = self._lp_budget()
        if self.cold_pivots is None:
            start = self.eng.iterations
            st = self.eng.solve(max_iter=budget, cutoff=cutoff, deadline=self.deadline)
            self.cold_pivots = self.eng.iterations - start
            return st
        patience = 2 * self.cold_pivots + 50
        if budget <= patience:
            return self.eng.solve(max_iter=budget, cutoff=cutoff, deadline=self.deadline)
        st = self.eng.solve(max_iter=patience, cutoff=cutoff, deadline=self.deadline)
        if st != lpmod.ITERATION_LIMIT:
            return st
        self.restarts += 1
        self.eng.reset_basis()
        return self.eng.solve(max_iter=self._lp_budget(), cutoff=cutoff, deadline=self.deadline)

    def _cutoff(self) -> float:
        if not math.isfinite(self.inc_obj):
            return math.inf
        return self.inc_obj - max(self.cfg.gap_tolerance * abs(self.inc_obj), 1e-9)

    def run(self) -> SolveResult:
        heap: list[_Node] = []
        counter = itertools.count()
        root = _Node(-math.inf, next(counter), 0, ())
        stack = [root]
        limit_hit = False
        best_open = -math.inf
        root_bound = -math.inf
        while stack or heap:
            if self.out_of_budget():
                limit_hit = True
                break
            if stack:
                node = stack.pop()
            else:
                node = heapq.heappop(heap)
                if node.basis is not None:
                    self._restore(node.basis)
            if node.bound >= self._cutoff():
                continue
            st, bound, x = self.evaluate(node)
            self.nodes += 1
            if st == lpmod.TIME_LIMIT or st == lpmod.ITERATION_LIMIT:
                heapq.heappush(heap, node)
                limit_hit = True
                break
            if st == lpmod.NUMERICAL:
                raise RuntimeError(f"LP breakdown at node {node.seq}; cannot prune safely")
            if node.seq == 0:
                root_bound = bound
            line = f"node {node.seq} depth {node.depth} bound {bound:.9g} cuts {len(self.all_cuts)} incumbent {self.inc_obj:.9g}"
            if self.cfg.log_nodes:
                self._log(line)
            else:
                self.log_lines.append(line)
            if x is None or bound >= self._cutoff():
                continue
            if self.cfg.heuristic_every and self.nodes % self.cfg.heuristic_every == 0 and self.m.layout is not None:
                self._offer(round_incumbent(self.m, x), "rounding")
            j = self._structural()
            if j is None:
                j = self._fractional(x)
            if j is None:
                self._offer(x, "relaxation")
                if bound >= self._cutoff():
                    continue
                # integral but not closed by its own polish: keep splitting
                j = self._unfixed_binary()
                if j is None:
                    continue
            if bound >= self._cutoff():
                continue
            snap = self._snapshot()
            down = _Node(bound, next(counter), node.depth + 1, node.fixes + ((j, 0.0, 0.0),), snap)
            up = _Node(bound, next(counter), node.depth + 1, node.fixes + ((j, 1.0, 1.0),), snap)
            first, second = (up, down) if x[j] >= 0.5 else (down, up)
            heapq.heappush(heap, second)
            stack.append(first)
        open_bounds = [n.bound for n in heap] + [n.bound for n in stack]
        if limit_hit and open_bounds:
            best_bound = min(min(open_bounds), self.inc_obj)
        else:
            best_bound = self.inc_obj if self.inc_x is not None else math.inf
        if not limit_hit:
            status = OPTIMAL if self.inc_x is not None else INFEASIBLE
        else:
            status = FEASIBLE_LIMIT if self.inc_x is not None else NO_INCUMBENT_LIMIT
        if not math.isfinite(best_bound) and status == NO_INCUMBENT_LIMIT:
            best_bound = root_bound
        gap = relative_gap(self.inc_obj, best_bound)
        if status == FEASIBLE_LIMIT and gap <= self.cfg.gap_tolerance:
            status = OPTIMAL
        return SolveResult(
            status=status,
            incumbent=self.inc_x,
            objective=self.inc_obj,
            best_bound=best_bound,
            gap=gap,
            nodes_explored=self.nodes,
            cuts_added=len(self.all_cuts),
            wall_time=time.monotonic() - self.t0,
            lp_iterations=self.eng.iterations,
            cuts=self.all_cuts,
            log_lines=self.log_lines,
        )


def solve_miqp(
    m: MiqpModel,
    cfg: BnbConfig = BnbConfig(),
    starts: Sequence[np.ndarray] = (),
    log_sink: Optional[Callable[[str], None]] = None,
) -> SolveResult:
    """Solve the model to ``cfg.gap_tolerance`` or until a limit is reached.

    ``starts`` are integral valuations used as initial incumbents.
    """
    return _Search(m, cfg, starts, log_sink).run()


# ----------------------------------------------------------------------
# brute-force reference for depth-1 trees


def brute_force_oracle(d: Dataset, costs: CostConfig, opts: ModelOptions = ModelOptions(), max_n: int = 12) -> tuple[float, np.ndarray]:
    """Exact optimum of the depth-1 model by enumerating the root's positive side.

    Every subset S of observations is tried as the reference (right) class.
    Given S all binaries follow; the leaf classes are enumerated outright and
    the hyperplane comes from the fixed-routing LP with tangent cuts.
    """
    if d.n > max_n:
        raise ValueError(f"enumeration over 2^{d.n} subsets is too large (limit n <= {max_n})")
    topo = build_topology(1)
    m = build_model(d, topo, costs, opts)
    lay = m.layout
    n, K = d.n, d.K
    y = d.y
    X = d.X
    best = (math.inf, None)
    cont_cache: dict = {}
    for mask in range(2 ** n):
        S = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        n_pos = int(S.sum())
        split = 0 < n_pos < n
        # leaves: 2 gets alpha=0 (left), 3 gets alpha=1 (right)
        best_leaf = None
        for k2 in range(1, K + 1):
            for k3 in range(1, K + 1):
                L2 = int(np.sum(~S & (y != k2)))
                L3 = int(np.sum(S & (y != k3)))
                cost = costs.c1 * (L2 + L3) + (costs.c3 if split else 0.0)
                if best_leaf is None or cost < best_leaf[0] - 1e-12:
                    cand = _oracle_valuation(m, S, split, k2, k3)
                    if _satisfies_rows(m, cand, lay_families=True):
                        best_leaf = (cost, k2, k3, cand)
        if best_leaf is None or best_leaf[0] >= best[0]:
            continue
        if split:
            key = (mask, (2 ** n - 1) ^ mask)
            key = min(key)
            if key not in cont_cache:
                Xp, Xn = (X[S], X[~S]) if key == mask else (X[~S], X[S])
                cont_cache[key] = solve_split_lp(
                    [(Xp, Xn)], costs.c2, opts.omega_bound, 1.0 - opts.route_margin, tol=1e-7
                )
            res = cont_cache[key]
            if res.status != lpmod.OPTIMAL:
                continue
            sign = 1.0 if key == mask else -1.0
            w, w0 = sign * res.W[0], sign * res.W0[0]
            ep, en = res.errors[0] if key == mask else res.errors[0][::-1]
            total = best_leaf[0] + res.upper
        else:
            w, w0 = np.zeros(d.p), (1.0 if n_pos == n else -1.0)
            ep = en = np.zeros(0)
            total = best_leaf[0]
        if total < best[0]:
            x = best_leaf[3].copy()
            x[lay.w[1]] = w
            x[lay.w0[1]] = w0
            if split:
                x[lay.e[np.nonzero(S)[0], 1]] = ep
                x[lay.e[np.nonzero(~S)[0], 1]] = en
            x[lay.delta] = 0.5 * float(w @ w)
            best = (total, x)
    if best[1] is None:
        raise ValueError("no feasible depth-1 tree")
    return float(m.objective @ best[1]), best[1]


def _oracle_valuation(m: MiqpModel, S: np.ndarray, split: bool, k2: int, k3: int) -> np.ndarray:
    lay = m.layout
    y = m.data.y
    x = np.zeros(m.num_vars)
    x[lay.z[:, 1]] = 1.0
    x[lay.z[~S, 2]] = 1.0
    x[lay.z[S, 3]] = 1.0
    x[lay.alpha[S, 1]] = 1.0
    x[lay.h[S, 1]] = 1.0
    x[lay.d[1]] = 1.0 if split else 0.0
    x[lay.v[1]] = 0.0 if S.all() else 1.0
    x[lay.q[k2, 2]] = 1.0
    x[lay.q[k3, 3]] = 1.0
    x[lay.L[2]] = float(np.sum(~S & (y != k2)))
    x[lay.L[3]] = float(np.sum(S & (y != k3)))
    return x


def _satisfies_rows(m: MiqpModel, x: np.ndarray, lay_families: bool = True) -> bool:
    """Check only the rows that do not involve continuous split variables."""
    lay = m.layout
    cont = np.zeros(m.num_vars, dtype=bool)
    for t in lay.topo.branch_nodes:
        cont[lay.w[t]] = True
        cont[lay.w0[t]] = True
        cont[lay.e[:, t]] = True
    cont[lay.delta] = True
    A = m.matrix
    act = A @ x
    touches = (abs(A) @ cont.astype(float)) > 0
    for i, r in enumerate(m.rows):
        if touches[i]:
            continue
        a, b = act[i], r.rhs
        viol = {"<=": a - b, ">=": b - a, "==": abs(a - b)}[r.sense]
        if viol > 1e-9:
            return False
    return True
