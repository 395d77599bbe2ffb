"""Mixed-integer model of the SVM-split classification tree.

Observations are indexed 0..n-1, tree nodes 1..T and classes 1..K.  A split at
branch node ``t`` separates two *fictitious* classes chosen by the model
(``alpha[i,t] = 1`` for the reference class, which lies on the positive side
of the hyperplane and descends to the right child ``2t+1``).  The margin term
``delta >= 0.5 * ||w_t||^2`` is kept as a quadratic epigraph row; every other
constraint is linear.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset
from .topology import TreeTopology

ALL_FAMILIES = ("VI1", "VI2", "VI3", "VI4", "VI5")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class CostConfig:
    c1: float = 1.0  # per misclassified training point at a leaf
    c2: float = 1.0  # per unit of hinge error at a split
    c3: float = 1.0  # per applied split

    def __post_init__(self):
        for name in ("c1", "c2", "c3"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ModelError(f"{name} must be positive and finite, got {v!r}")


@dataclass(frozen=True)
class ModelOptions:
    omega_bound: float = 50.0
    big_m_split: Optional[float] = None  # default: omega_bound * (p + 1) + 1
    c8_constant: Optional[float] = None  # default: default_c8_constant(data)
    valid_inequalities: frozenset = frozenset({"VI2", "VI3", "VI4"})
    fixing_radius: Optional[float] = None  # None disables the fixing heuristic
    route_margin: float = 1e-3  # hinge errors are capped at 1 - route_margin
    pruning_hierarchy: bool = True  # d[t] <= d[parent(t)]
    vi1_seed: int = 0

    def __post_init__(self):
        if not self.omega_bound > 0:
            raise ModelError("omega_bound must be positive")
        if self.big_m_split is not None and self.big_m_split < 1:
            raise ModelError("big_m_split must be >= 1")
        if self.c8_constant is not None and self.c8_constant < 1:
            raise ModelError("c8_constant must be >= 1")
        if not 0 <= self.route_margin < 1:
            raise ModelError("route_margin must lie in [0, 1)")
        unknown = set(self.valid_inequalities) - set(ALL_FAMILIES)
        if unknown:
            raise ModelError(f"unknown valid-inequality families {sorted(unknown)}")
        object.__setattr__(self, "valid_inequalities", frozenset(self.valid_inequalities))
        if self.fixing_radius is not None and not self.fixing_radius > 0:
            raise ModelError("fixing_radius must be positive")


@dataclass(frozen=True)
class Variable:
    name: str
    lb: float
    ub: float
    kind: str  # "B" binary or "C" continuous


@dataclass(frozen=True)
class LinearRow:
    name: str
    idx: np.ndarray
    val: np.ndarray
    sense: str
    rhs: float

    @property
    def family(self) -> str:
        return self.name.split("[", 1)[0]


@dataclass(frozen=True)
class Epigraph:
    """``x[delta] >= factor * sum(x[j]**2 for j in vars)``."""

    name: str
    delta: int
    vars: tuple[int, ...]
    factor: float = 0.5


@dataclass(frozen=True)
class Layout:
    """Variable ids by role; unused slots hold -1."""

    n: int
    p: int
    K: int
    topo: TreeTopology
    z: np.ndarray  # (n, T+1)
    alpha: np.ndarray  # (n, T+1), branch nodes only
    h: np.ndarray
    e: np.ndarray
    d: np.ndarray  # (T+1,)
    v: np.ndarray
    w: np.ndarray  # (T+1, p)
    w0: np.ndarray  # (T+1,)
    q: np.ndarray  # (K+1, T+1), leaves only
    L: np.ndarray  # (T+1,)
    delta: int


@dataclass(frozen=True, eq=False)
class MiqpModel:
    variables: list[Variable]
    rows: list[LinearRow]
    epigraphs: list[Epigraph]
    objective: np.ndarray
    name: str = "moctsvm"
    layout: Optional[Layout] = field(default=None, repr=False)
    data: Optional[Dataset] = field(default=None, repr=False)
    costs: Optional[CostConfig] = None
    options: Optional[ModelOptions] = None
    families: frozenset = frozenset()

    @cached_property
    def var_index(self) -> dict[str, int]:
        return {v.name: j for j, v in enumerate(self.variables)}

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([v.lb for v in self.variables])

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([v.ub for v in self.variables])

    @cached_property
    def binary_mask(self) -> np.ndarray:
        return np.array([v.kind == "B" for v in self.variables])

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        idx = [r.idx for r in self.rows]
        val = [r.val for r in self.rows]
        counts = [len(i) for i in idx]
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        cols = np.concatenate(idx) if idx else np.zeros(0, dtype=int)
        data = np.concatenate(val) if val else np.zeros(0)
        return sp.csr_matrix((data, cols, indptr), shape=(len(self.rows), self.num_vars))

    @cached_property
    def rhs(self) -> np.ndarray:
        return np.array([r.rhs for r in self.rows])

    @cached_property
    def senses(self) -> list[str]:
        return [r.sense for r in self.rows]

    def count(self, kind: str) -> int:
        return sum(v.kind == kind for v in self.variables)

    def with_rows(self, rows: Sequence[LinearRow], families: Iterable[str] = ()) -> "MiqpModel":
        return replace(self, rows=self.rows + list(rows), families=self.families | frozenset(families))

    def with_bounds(self, fixings: Iterable[tuple[str, float]]) -> "MiqpModel":
        """Copy with the named variables fixed to the given values."""
        variables = list(self.variables)
        for name, value in fixings:
            j = self.var_index[name]
            var = variables[j]
            if not var.lb - 1e-9 <= value <= var.ub + 1e-9:
                raise ModelError(f"fixing {name}={value} outside its bounds [{var.lb}, {var.ub}]")
            variables[j] = replace(var, lb=float(value), ub=float(value))
        return replace(self, variables=variables)

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.objective @ x)


# ----------------------------------------------------------------------
# model construction


def _node_majority(y: np.ndarray, K: int) -> int:
    counts = np.bincount(y - 1, minlength=K)
    return int(np.argmax(counts)) + 1  # argmax picks the smallest id on ties


def default_c8_constant(d: Dataset) -> int:
    """Big-M for the leaf-error rows: the largest class count.

    With leaf t labelled k', the row of another class k is slack exactly
    when the constant covers ``#(class k' in t) - #(class k in t)``, which is
    at most the size of class k'.
    """
    return max(int(d.class_counts().max()), 1)


def build_model(d: Dataset, topo: TreeTopology, costs: CostConfig, opts: ModelOptions = ModelOptions()) -> MiqpModel:
    if d.K < 2:
        raise ModelError("the model needs at least two classes")
    if d.n and (d.X.min() < -1e-12 or d.X.max() > 1 + 1e-12):
        raise ModelError("features must be normalized into [0, 1]")
    n, p, K, T = d.n, d.p, d.K, topo.T
    Om = float(opts.omega_bound)
    M = float(opts.big_m_split) if opts.big_m_split is not None else Om * (p + 1) + 1.0
    C8 = float(opts.c8_constant) if opts.c8_constant is not None else float(default_c8_constant(d))
    branch, leaves = topo.branch_nodes, topo.leaf_nodes

    variables: list[Variable] = []

    def add(name, lb, ub, kind):
        variables.append(Variable(name, float(lb), float(ub), kind))
        return len(variables) - 1

    def neg(shape, dtype=int):
        return np.full(shape, -1, dtype=dtype)

    z = neg((n, T + 1), dtype=int)
    alpha, h, e = neg((n, T + 1), dtype=int), neg((n, T + 1), dtype=int), neg((n, T + 1), dtype=int)
    dv, vv, w0, L = neg(T + 1, dtype=int), neg(T + 1, dtype=int), neg(T + 1, dtype=int), neg(T + 1, dtype=int)
    w = neg((T + 1, p), dtype=int)
    q = neg((K + 1, T + 1), dtype=int)

    for i in range(n):
        for t in topo.nodes:
            z[i, t] = add(f"z[{i}][{t}]", 0, 1, "B")
    for i in range(n):
        for t in branch:
            alpha[i, t] = add(f"alpha[{i}][{t}]", 0, 1, "B")
    for i in range(n):
        for t in branch:
            h[i, t] = add(f"h[{i}][{t}]", 0, 1, "B")
    for t in branch:
        dv[t] = add(f"d[{t}]", 0, 1, "B")
    for t in branch:
        vv[t] = add(f"v[{t}]", 0, 1, "B")
    for t in leaves:
        for k in range(1, K + 1):
            q[k, t] = add(f"q[{k}][{t}]", 0, 1, "B")
    for t in branch:
        for j in range(p):
            w[t, j] = add(f"w[{t}][{j}]", -Om, Om, "C")
        w0[t] = add(f"w0[{t}]", -Om, Om, "C")
    e_cap = 1.0 - opts.route_margin
    for i in range(n):
        for t in branch:
            e[i, t] = add(f"e[{i}][{t}]", 0, e_cap, "C")
    for t in leaves:
        L[t] = add(f"L[{t}]", 0, n, "C")
    delta = add("delta", 0, 0.5 * p * Om * Om, "C")

    layout = Layout(n, p, K, topo, z, alpha, h, e, dv, vv, w, w0, q, L, delta)
    rows: list[LinearRow] = []

    def row(name, idx, val, sense, rhs):
        rows.append(LinearRow(name, np.asarray(idx, dtype=int), np.asarray(val, dtype=float), sense, float(rhs)))

    X = d.X
    Y = d.Y
    for t in branch:
        for i in range(n):
            wi = list(w[t]) + [w0[t]]
            xi = list(X[i]) + [1.0]
            row(f"C2a[{i},{t}]", wi + [e[i, t], z[i, t], alpha[i, t]], xi + [1.0, -M, -M], ">=", 1.0 - 2.0 * M)
            row(f"C2b[{i},{t}]", wi + [e[i, t], z[i, t], alpha[i, t]], xi + [-1.0, M, -M], "<=", -1.0 + M)
    for i in range(n):
        for s, level in enumerate(topo.levels):
            row(f"C3[{i},{s}]", [z[i, t] for t in level], np.ones(len(level)), "==", 1.0)
    for i in range(n):
        for t in range(2, T + 1):
            row(f"C4[{i},{t}]", [z[i, t], z[i, t // 2]], [1.0, -1.0], "<=", 0.0)
    for i in range(n):
        for t in range(2, T + 1):
            pt = t // 2
            if t % 2 == 0:
                row(f"C5a[{i},{t}]", [z[i, pt], z[i, t], alpha[i, pt]], [1.0, -1.0, -1.0], "<=", 0.0)
            else:
                row(f"C5b[{i},{t}]", [z[i, pt], z[i, t], alpha[i, pt]], [1.0, -1.0, 1.0], "<=", 1.0)
    for t in branch:
        for i in range(n):
            row(f"C6a[{i},{t}]", [h[i, t], z[i, t], alpha[i, t]], [1.0, -1.0, -1.0], ">=", -1.0)
            row(f"C6b[{i},{t}]", [h[i, t], z[i, t], alpha[i, t]], [1.0, -1.0, 1.0], "<=", 1.0)
            row(f"C6hz[{i},{t}]", [h[i, t], z[i, t]], [1.0, -1.0], "<=", 0.0)
            row(f"C6ha[{i},{t}]", [h[i, t], alpha[i, t]], [1.0, -1.0], "<=", 0.0)
        row(
            f"C6c[{t}]",
            list(z[:, t]) + list(h[:, t]) + [vv[t]],
            [1.0] * n + [-1.0] * n + [-float(n)],
            "<=",
            0.0,
        )
        row(f"C6d[{t}]", list(h[:, t]) + [vv[t], dv[t]], [1.0] * n + [float(n), -float(n)], "<=", float(n))
    for t in leaves:
        row(f"C7[{t}]", [q[k, t] for k in range(1, K + 1)], np.ones(K), "==", 1.0)
    for t in leaves:
        for k in range(1, K + 1):
            coef = -(1.0 - Y[:, k - 1])
            keep = coef != 0
            row(
                f"C8[{k},{t}]",
                [L[t]] + list(z[keep, t]) + [q[k, t]],
                [1.0] + list(coef[keep]) + [-C8],
                ">=",
                -C8,
            )
    if opts.pruning_hierarchy:
        for t in branch:
            if t >= 2:
                row(f"H[{t}]", [dv[t], dv[t // 2]], [1.0, -1.0], "<=", 0.0)

    epigraphs = [Epigraph(f"C1[{t}]", delta, tuple(int(j) for j in w[t])) for t in branch]

    obj = np.zeros(len(variables))
    obj[delta] = 1.0
    obj[L[list(leaves)]] = costs.c1
    obj[e[:, list(branch)].ravel()] = costs.c2
    obj[dv[list(branch)]] = costs.c3

    m = MiqpModel(variables, rows, epigraphs, obj, layout=layout, data=d, costs=costs, options=opts)
    if opts.valid_inequalities:
        m = add_valid_inequalities(m, d, topo, opts.valid_inequalities)
    if opts.fixing_radius is not None:
        m = m.with_bounds(apply_fixing_heuristic(d, topo, opts.fixing_radius))
    return m


def add_valid_inequalities(m: MiqpModel, d: Dataset, topo: TreeTopology, families: Iterable[str]) -> MiqpModel:
    """Append the requested strengthening families.

    VI4 (``h <= alpha``) is already part of the base model, so it adds no rows.
    VI5 needs at least as many leaves as classes and is skipped otherwise.
    """
    lay = m.layout
    if lay is None or lay.n != d.n or lay.topo != topo:
        raise ModelError("valid inequalities need the model built from the same data and tree")
    families = set(families)
    unknown = families - set(ALL_FAMILIES)
    if unknown:
        raise ModelError(f"unknown valid-inequality families {sorted(unknown)}")
    new: list[LinearRow] = []
    n, K = lay.n, lay.K

    def row(name, idx, val, sense, rhs):
        new.append(LinearRow(name, np.asarray(idx, dtype=int), np.asarray(val, dtype=float), sense, float(rhs)))

    if "VI1" in families and "VI1" not in m.families and n >= 2:
        seed = m.options.vi1_seed if m.options is not None else 0
        rng = np.random.default_rng(seed)
        for s in range(2, topo.T + 1):
            for u in range(topo.level(s)):
                t = topo.ancestor_at_level(s, u)
                for _ in range(n):
                    i, i2 = rng.choice(n, size=2, replace=False)
                    row(
                        f"VI1[{i},{i2},{s},{t}]",
                        [lay.z[i, s], lay.z[i2, s], lay.z[i, t], lay.z[i2, t]],
                        [1.0, 1.0, -1.0, -1.0],
                        "<=",
                        0.0,
                    )
    if "VI2" in families and "VI2" not in m.families:
        for t in topo.leaf_nodes[::2]:
            s = t + 1
            for k in range(1, K + 1):
                row(f"VI2[{k},{t},{s}]", [lay.q[k, t], lay.q[k, s], lay.d[t // 2]], [1.0, 1.0, 1.0], "<=", 2.0)
    if "VI3" in families and "VI3" not in m.families:
        for t in topo.branch_nodes:
            for i in range(n):
                row(f"VI3[{i},{t}]", [lay.alpha[i, t], lay.z[i, t]], [1.0, -1.0], "<=", 0.0)
    if "VI5" in families and "VI5" not in m.families and K <= len(topo.leaf_nodes):
        leaves = list(topo.leaf_nodes)
        hi = 2 ** topo.D - 1
        for k in range(1, K + 1):
            idx = [lay.q[k, t] for t in leaves]
            row(f"VI5lo[{k}]", idx, np.ones(len(idx)), ">=", 1.0)
            row(f"VI5hi[{k}]", idx, np.ones(len(idx)), "<=", float(hi))
    return m.with_rows(new, families)


def apply_fixing_heuristic(d: Dataset, topo: TreeTopology, eps: float) -> list[tuple[str, float]]:
    """Preprocessing that pins two same-class neighborhoods to opposite leaves.

    The densest same-class Euclidean ``eps``-ball goes to the first left leaf
    ``2**D``; the same-class ball around the point farthest from its center
    goes to the last right leaf ``T``.
    """
    if not eps > 0:
        raise ModelError("fixing radius must be positive")
    X, y = d.X, d.y
    dist = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))
    same = (dist <= eps) & (y[:, None] == y[None, :])
    sizes = same.sum(axis=1)
    i0 = int(np.argmax(sizes))
    i_f = int(np.argmax(dist[i0]))
    first = np.nonzero(same[i0])[0]
    last = np.nonzero(same[i_f])[0]
    if np.intersect1d(first, last).size:
        raise ModelError("fixing heuristic neighborhoods overlap; refusing contradictory fixings")
    t0, tf = topo.leaf_nodes[0], topo.leaf_nodes[-1]
    out: list[tuple[str, float]] = []
    for members, target in ((first, t0), (last, tf)):
        for i in members:
            for t in topo.leaf_nodes:
                out.append((f"z[{i}][{t}]", 1.0 if t == target else 0.0))
    return out


# ----------------------------------------------------------------------
# checking


@dataclass(frozen=True)
class Violation:
    name: str
    residual: float


def check_feasible(m: MiqpModel, x: np.ndarray, tol: float = 1e-6) -> list[Violation]:
    """Every violated bound, integrality, row and epigraph constraint."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.num_vars,):
        raise ModelError(f"assignment has shape {x.shape}, model has {m.num_vars} variables")
    out: list[Violation] = []
    for j, var in enumerate(m.variables):
        r = max(var.lb - x[j], x[j] - var.ub, 0.0)
        if r > tol:
            out.append(Violation(f"bound:{var.name}", r))
        if var.kind == "B":
            r = abs(x[j] - round(x[j]))
            if r > tol:
                out.append(Violation(f"integrality:{var.name}", r))
    act = m.matrix @ x
    for i, row in enumerate(m.rows):
        a, b = act[i], row.rhs
        r = {"<=": a - b, ">=": b - a, "==": abs(a - b)}[row.sense]
        if r > tol * (1 + abs(b)):
            out.append(Violation(row.name, float(r)))
    for ep in m.epigraphs:
        r = ep.factor * float(np.sum(x[list(ep.vars)] ** 2)) - x[ep.delta]
        if r > tol * (1 + abs(x[ep.delta])):
            out.append(Violation(ep.name, float(r)))
    lay = m.layout
    if lay is not None:
        topo = lay.topo
        for i in range(lay.n):
            # the occupied nodes must form one root-to-leaf path
            occ = [t for t in topo.nodes if x[lay.z[i, t]] > 0.5]
            leaves = [t for t in occ if topo.is_leaf(t)]
            if len(leaves) != 1 or sorted(occ) != topo.path(leaves[0]):
                out.append(Violation(f"path[{i}]", 1.0))
    return out


def true_objective(m: MiqpModel, x: np.ndarray) -> float:
    """Objective with ``delta`` replaced by its exact value max 0.5*||w_t||^2."""
    x = np.array(x, dtype=float)
    if m.epigraphs:
        delta = max(ep.factor * float(np.sum(x[list(ep.vars)] ** 2)) for ep in m.epigraphs)
        x[m.epigraphs[0].delta] = delta
    return float(m.objective @ x)


# ----------------------------------------------------------------------
# text format


def _fmt(v: float) -> str:
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return repr(float(v))


def format_model(m: MiqpModel) -> str:
    """Line-oriented dump of a model (see ``docs/model_format.md``)."""
    out = [f"MIQP {m.name}", f"VARIABLES {m.num_vars}"]
    for j, v in enumerate(m.variables):
        out.append(f"{j} {v.name} {v.kind} {_fmt(v.lb)} {_fmt(v.ub)}")
    out.append(f"ROWS {len(m.rows)}")
    for r in m.rows:
        terms = " ".join(f"{int(i)}:{_fmt(a)}" for i, a in zip(r.idx, r.val))
        out.append(f"{r.name} {r.sense} {_fmt(r.rhs)} : {terms}")
    out.append(f"EPIGRAPHS {len(m.epigraphs)}")
    for ep in m.epigraphs:
        out.append(f"{ep.name} {ep.delta} {_fmt(ep.factor)} : {' '.join(str(j) for j in ep.vars)}")
    nz = np.nonzero(m.objective)[0]
    out.append(f"OBJECTIVE {nz.size}")
    out.append(" ".join(f"{int(j)}:{_fmt(m.objective[j])}" for j in nz))
    out.append("END")
    return "\n".join(out) + "\n"


def parse_model(text: str) -> MiqpModel:
    """Inverse of :func:`format_model` (structure only, no dataset metadata)."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    pos = 0

    def take(prefix):
        nonlocal pos
        head = lines[pos].split()
        if head[0] != prefix:
            raise ModelError(f"expected {prefix} section, got {lines[pos]!r}")
        pos += 1
        return head

    name = take("MIQP")[1] if len(lines[0].split()) > 1 else "model"
    nv = int(take("VARIABLES")[1])
    variables = []
    for _ in range(nv):
        j, vname, kind, lb, ub = lines[pos].split()
        variables.append(Variable(vname, float(lb), float(ub), kind))
        pos += 1
    nr = int(take("ROWS")[1])
    rows = []
    for _ in range(nr):
        head, _, terms = lines[pos].partition(" : ")
        rname, sense, rhs = head.split()
        pairs = [t.split(":") for t in terms.split()]
        rows.append(
            LinearRow(rname, np.array([int(a) for a, _ in pairs], dtype=int), np.array([float(b) for _, b in pairs]), sense, float(rhs))
        )
        pos += 1
    ne = int(take("EPIGRAPHS")[1])
    epis = []
    for _ in range(ne):
        head, _, ids = lines[pos].partition(" : ")
        ename, dj, factor = head.split()
        epis.append(Epigraph(ename, int(dj), tuple(int(j) for j in ids.split()), float(factor)))
        pos += 1
    nobj = int(take("OBJECTIVE")[1])
    obj = np.zeros(nv)
    if nobj:
        for t in lines[pos].split():
            j, c = t.split(":")
            obj[int(j)] = float(c)
        pos += 1
    if lines[pos].strip() != "END":
        raise ModelError("missing END marker")
    return MiqpModel(variables, rows, epis, obj, name=name)
