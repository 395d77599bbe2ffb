"""Bounded-variable revised dual simplex.

Rows are stored as ``A x + s = b`` with one logical (slack) column per row;
the sense of a row is encoded in the bounds of its slack:

    <=  ->  s in [0, +inf)
    >=  ->  s in (-inf, 0]
    ==  ->  s in [0, 0]

Box bounds on the structural variables are handled implicitly (nonbasic
variables sit at one of their bounds), so ``[0, 1]`` binaries never add rows.
The basis is held as a sparse LU factorization followed by a product-form
list of pivot updates, rebuilt every ``refactor_every`` pivots.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import qr
from scipy.sparse.linalg import splu

BASIC, AT_LB, AT_UB, FREE = 0, 1, 2, 3
SENSES = ("<=", ">=", "==")

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
CUTOFF = "cutoff"
ITERATION_LIMIT = "iteration_limit"
TIME_LIMIT = "time_limit"
NUMERICAL = "numerical_error"

# Stand-in for infinite bounds when a nonbasic variable must sit on that side.
ARTIFICIAL_BOUND = 1e7
SHIFT_LIMIT = 1e-4  # largest reduced-cost drift absorbed by a cost shift


class LpError(ValueError):
    pass


@dataclass
class LpProblem:
    """``min c'x`` subject to sense-tagged rows and variable bounds."""

    objective: np.ndarray
    A: np.ndarray | sp.spmatrix
    senses: list[str]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.size
        if sp.issparse(self.A):
            self.A = sp.csc_matrix(self.A, dtype=float)
        else:
            A = np.atleast_2d(np.asarray(self.A, dtype=float))
            if A.size % max(n, 1) or (A.ndim == 2 and A.size and A.shape[1] != n):
                raise LpError(f"A has {A.shape[-1]} columns, objective has {n}")
            self.A = A.reshape(-1, n)
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        self.senses = list(self.senses)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        m = self.A.shape[0]
        if self.A.shape[1] != n:
            raise LpError(f"A has {self.A.shape[1]} columns, objective has {n}")
        if len(self.senses) != m or self.rhs.size != m:
            raise LpError("senses/rhs length must match the number of rows")
        bad = [s for s in self.senses if s not in SENSES]
        if bad:
            raise LpError(f"unknown row sense {bad[0]!r}")
        if np.any(self.lower > self.upper):
            j = int(np.argmax(self.lower > self.upper))
            raise LpError(f"variable {j} has lower bound above upper bound")

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def num_rows(self) -> int:
        return self.rhs.size

    def with_rows(self, rows: Sequence[tuple]) -> "LpProblem":
        """Copy of the problem with ``(coefficients, sense, rhs)`` rows appended."""
        if not rows:
            return self
        extra = np.array([np.asarray(r[0], dtype=float) for r in rows])
        if sp.issparse(self.A):
            A = sp.vstack([self.A, sp.csc_matrix(extra)], format="csc")
        else:
            A = np.vstack([self.A, extra])
        return LpProblem(
            self.objective,
            A,
            self.senses + [r[1] for r in rows],
            np.concatenate([self.rhs, [float(r[2]) for r in rows]]),
            self.lower,
            self.upper,
        )


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    iterations: int
    basis: Optional[tuple] = field(default=None, repr=False)

    def residuals(self, p: LpProblem) -> dict:
        """Primal, dual and complementary-slackness residuals at this point."""
        return kkt_residuals(p, self.x, self.duals, self.reduced_costs)


def slack_bounds(senses: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([0.0 if s in ("<=", "==") else -np.inf for s in senses])
    hi = np.array([np.inf if s == "<=" else 0.0 for s in senses])
    return lo, hi


def kkt_residuals(p: LpProblem, x, y, d, tol: float = 1e-7) -> dict:
    A = p.A
    ax = A @ x
    slack = p.rhs - ax
    lo_s, hi_s = slack_bounds(p.senses)
    primal = max(
        float(np.max(np.maximum(lo_s - slack, slack - hi_s), initial=0.0)),
        float(np.max(np.maximum(p.lower - x, x - p.upper), initial=0.0)),
    )
    # d > 0 is only allowed at a lower bound, d < 0 only at an upper bound;
    # slack columns carry reduced cost -y
    dual = 0.0
    comp = 0.0
    with np.errstate(invalid="ignore"):
        for lo, hi, dj, xj in [(lo_s, hi_s, -y, slack), (p.lower, p.upper, d, x)]:
            fixed = lo == hi
            at_lo = np.isfinite(lo) & (np.abs(xj - lo) <= tol * (1 + np.abs(lo)))
            at_hi = np.isfinite(hi) & (np.abs(hi - xj) <= tol * (1 + np.abs(hi)))
            pos = np.where(at_lo | fixed, 0.0, np.maximum(dj, 0.0))
            neg = np.where(at_hi | fixed, 0.0, np.maximum(-dj, 0.0))
            dual = max(dual, float(np.max(np.maximum(pos, neg), initial=0.0)))
            gap_lo = np.where(np.isfinite(lo), np.abs(xj - lo), np.inf)
            gap_hi = np.where(np.isfinite(hi), np.abs(hi - xj), np.inf)
            gap = np.minimum(gap_lo, gap_hi)
            gap = np.where(np.isinf(gap) | fixed, 0.0, gap)
            comp = max(comp, float(np.max(np.abs(dj) * gap, initial=0.0)))
    primal_obj = float(p.objective @ x)
    # dual objective: b'y plus bound terms carried by the reduced costs
    bound = np.where(d > 0, p.lower, p.upper)
    bound = np.where(np.isfinite(bound), bound, x)
    bound_term = bound * d
    dual_obj = float(p.rhs @ y + np.sum(bound_term))
    return {
        "primal": primal,
        "dual": dual,
        "complementarity": comp,
        "primal_objective": primal_obj,
        "dual_objective": dual_obj,
        "duality_gap": abs(primal_obj - dual_obj),
    }


def _append_rows_csc(A: sp.csc_matrix, R) -> sp.csc_matrix:
    """Stack the rows ``R`` under ``A`` without leaving CSC storage."""
    R = sp.csc_matrix(R, dtype=float)
    m0, n = A.shape
    la = np.diff(A.indptr)
    lr = np.diff(R.indptr)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(la + lr, out=indptr[1:])
    data = np.empty(int(indptr[-1]))
    indices = np.empty(int(indptr[-1]), dtype=np.int64)
    pa = np.repeat(indptr[:-1] - A.indptr[:-1], la) + np.arange(A.nnz)
    pr = np.repeat(indptr[:-1] + la - R.indptr[:-1], lr) + np.arange(R.nnz)
    data[pa], indices[pa] = A.data, A.indices
    data[pr], indices[pr] = R.data, R.indices + m0
    return sp.csc_matrix((data, indices, indptr), shape=(m0 + R.shape[0], n))


def _keep_rows_csc(A: sp.csc_matrix, keep: np.ndarray) -> sp.csc_matrix:
    m, n = A.shape
    new_index = np.cumsum(keep) - 1
    mask = keep[A.indices]
    cols = np.repeat(np.arange(n), np.diff(A.indptr))[mask]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(cols, minlength=n), out=indptr[1:])
    return sp.csc_matrix((A.data[mask], new_index[A.indices[mask]], indptr), shape=(int(keep.sum()), n))


class _BasisFactor:
    """Sparse LU of a basis matrix plus product-form updates ``B_k = B_0 E_1 ... E_k``."""

    def __init__(self, B: sp.csc_matrix):
        self.m = B.shape[0]
        self.lu = splu(B, permc_spec="COLAMD") if self.m else None
        self.rows: list[int] = []
        self.cols: list[np.ndarray] = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        """Solve ``B x = v``."""
        if self.m == 0:
            return np.zeros(0)
        x = self.lu.solve(np.ascontiguousarray(v, dtype=float))
        for r, a in zip(self.rows, self.cols):
            xr = x[r] / a[r]
            x -= a * xr
            x[r] = xr
        return x

    def btran(self, v: np.ndarray) -> np.ndarray:
        """Solve ``B' y = v``."""
        if self.m == 0:
            return np.zeros(0)
        y = np.array(v, dtype=float)
        for r, a in zip(reversed(self.rows), reversed(self.cols)):
            y[r] -= (a @ y - y[r]) / a[r]
        return self.lu.solve(y, trans="T")

    def update(self, r: int, col: np.ndarray):
        self.rows.append(r)
        self.cols.append(col)

    @property
    def updates(self) -> int:
        return len(self.rows)


class DualSimplex:
    """Stateful bounded dual simplex with warm starts.

    The engine supports the operations a branch-and-bound search needs:
    changing variable bounds, appending rows and deleting rows whose slack
    is basic, each followed by a re-solve from the current basis.
    """

    def __init__(
        self,
        c,
        A,
        senses: Sequence[str],
        rhs,
        lower,
        upper,
        tol: float = 1e-7,
        refactor_every: int = 64,
        bland_after: int = 60,
        perturb: float = 0.0,
    ):
        self.n = int(np.size(c))
        self.tol = tol
        self.piv_tol = 1e-7
        self.refactor_every = refactor_every
        self.bland_after = bland_after
        self.A = sp.csc_matrix(A, dtype=float)
        if self.A.shape[1] != self.n:
            raise LpError("column count mismatch")
        self.m = self.A.shape[0]
        self.b = np.asarray(rhs, dtype=float).copy()
        s_lo, s_hi = slack_bounds(senses)
        self.senses = list(senses)
        self.cost = np.concatenate([np.asarray(c, dtype=float), np.zeros(self.m)])
        # Zero-cost boxed columns get a small fixed cost shift while iterating;
        # it breaks dual degeneracy and is removed before a solve returns.
        pert = np.zeros(self.n)
        if perturb > 0:
            rng = np.random.default_rng(self.n * 7919 + self.m)
            zero = (self.cost[: self.n] == 0) & np.isfinite(lower) & np.isfinite(upper)
            pert[zero] = perturb * rng.uniform(0.5, 1.0, int(zero.sum()))
        self.pert = pert
        self.work = self.cost.copy()
        self.lb = np.concatenate([np.asarray(lower, dtype=float), s_lo])
        self.ub = np.concatenate([np.asarray(upper, dtype=float), s_hi])
        self.basic = np.arange(self.n, self.n + self.m)
        self.status = np.full(self.n + self.m, AT_LB, dtype=np.int8)
        self.status[self.basic] = BASIC
        self.x = np.zeros(self.n + self.m)
        self.factor = _BasisFactor(sp.identity(self.m, format="csc"))
        self.weights = np.ones(self.m)
        self.iterations = 0
        self._fresh = True
        self._ensure_AT()

    # ------------------------------------------------------------------
    # basis bookkeeping

    def _ensure_AT(self):
        # CSR of A' shares the CSC arrays of A
        A = self.A
        self.AT = sp.csr_matrix((A.data, A.indices, A.indptr), shape=(self.n, A.shape[0]))

    def _column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        if j < self.n:
            lo, hi = self.A.indptr[j], self.A.indptr[j + 1]
            return self.A.indices[lo:hi], self.A.data[lo:hi]
        return np.array([j - self.n]), np.array([1.0])

    def _ftran(self, j: int) -> np.ndarray:
        idx, val = self._column(j)
        if idx.size == 0:
            return np.zeros(self.m)
        v = np.zeros(self.m)
        v[idx] = val
        return self.factor.ftran(v)

    def _basis_matrix(self) -> sp.csc_matrix:
        A = self.A
        basic = self.basic
        struct = basic < self.n
        js = basic[struct]
        lens = np.ones(self.m, dtype=np.int64)
        lens[struct] = A.indptr[js + 1] - A.indptr[js]
        indptr = np.zeros(self.m + 1, dtype=np.int64)
        np.cumsum(lens, out=indptr[1:])
        nnz = int(indptr[-1])
        indices = np.empty(nnz, dtype=np.int64)
        data = np.empty(nnz)
        # structural columns copy their CSC slices
        sl = lens[struct]
        tot = int(sl.sum())
        if tot:
            within = np.arange(tot) - np.repeat(np.cumsum(sl) - sl, sl)
            dst = np.repeat(indptr[:-1][struct], sl) + within
            src = np.repeat(A.indptr[js], sl) + within
            indices[dst] = A.indices[src]
            data[dst] = A.data[src]
        dst = indptr[:-1][~struct]
        indices[dst] = basic[~struct] - self.n
        data[dst] = 1.0
        return sp.csc_matrix((data, indices, indptr), shape=(self.m, self.m))

    def refactor(self) -> bool:
        """Rebuild the basis inverse, repairing a singular basis with slacks."""
        if self._invert():
            return True
        self._repair_basis()
        return self._invert()

    def _repair_basis(self):
        B = self._basis_matrix().toarray()
        _, R, piv = qr(B, pivoting=True, mode="economic")
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-9 * max(diag.max(), 1.0)))
        if rank == self.m:
            return
        keep, drop = piv[:rank], piv[rank:]
        Q, _ = np.linalg.qr(B[:, keep], mode="complete")
        perp = Q[:, rank:]
        # rows with the largest weight in the uncovered subspace get slacks
        _, _, rows = qr(perp.T, pivoting=True, mode="economic")
        for pos, row in zip(drop, rows[: len(drop)]):
            j = int(self.basic[pos])
            self.status[j] = AT_LB if np.isfinite(self.lb[j]) else (AT_UB if np.isfinite(self.ub[j]) else FREE)
            sj = self.n + int(row)
            self.basic[pos] = sj
            self.status[sj] = BASIC
        self.weights = np.ones(self.m)

    def _invert(self) -> bool:
        try:
            factor = _BasisFactor(self._basis_matrix())
        except RuntimeError:  # exactly singular
            return False
        if self.m:
            probe = factor.ftran(np.ones(self.m))
            if not np.all(np.isfinite(probe)) or np.abs(probe).max() > 1e11:
                return False
        self.factor = factor
        return True

    def _nonbasic_values(self) -> np.ndarray:
        lo = np.where(np.isfinite(self.lb), self.lb, -ARTIFICIAL_BOUND)
        hi = np.where(np.isfinite(self.ub), self.ub, ARTIFICIAL_BOUND)
        st = self.status
        return np.where(st == AT_LB, lo, np.where(st == AT_UB, hi, 0.0))

    def _recompute_primal(self):
        xs = self._nonbasic_values()
        xs[self.basic] = 0.0
        r = self.b - self.A @ xs[: self.n] - xs[self.n:]
        self.x = xs
        if self.m:
            self.x[self.basic] = self.factor.ftran(r)

    def _duals(self) -> np.ndarray:
        return self.factor.btran(self.work[self.basic]) if self.m else np.zeros(0)

    def _recompute_dual(self):
        y = self._duals()
        d = self.work.copy()
        if self.m:
            d[: self.n] -= self.AT @ y
            d[self.n:] -= y
        d[self.basic] = 0.0
        self.d = d

    def _restore_dual_feasibility(self, allow_shift: bool = False) -> bool:
        """Move nonbasic variables to the bound their reduced cost prefers.

        With ``allow_shift``, small dual infeasibilities that could only be
        fixed by parking a variable at an artificial bound are absorbed into
        the working cost instead.  Returns True when any status changed.
        """
        tol = self.tol
        st = self.status
        nb = st != BASIC
        if allow_shift:
            d = self.d
            wrong = nb & (
                ((d > tol) & ~np.isfinite(self.lb)) | ((d < -tol) & ~np.isfinite(self.ub))
            ) & (np.abs(d) <= SHIFT_LIMIT)
            if np.any(wrong):
                self.work[wrong] -= d[wrong]
                d[wrong] = 0.0
        fixed = self.lb == self.ub
        fin_lo = np.isfinite(self.lb)
        fin_hi = np.isfinite(self.ub)
        new = st.copy()
        d = self.d
        new[nb & (d > tol)] = AT_LB
        new[nb & (d < -tol)] = AT_UB
        small = nb & (np.abs(d) <= tol)
        new[small & (st == FREE) & fin_lo] = AT_LB
        new[small & (st == FREE) & ~fin_lo & fin_hi] = AT_UB
        # sitting on an artificial bound is only needed when the sign demands it
        new[small & (st == AT_LB) & ~fin_lo] = np.where(fin_hi, AT_UB, FREE)[small & (st == AT_LB) & ~fin_lo]
        new[small & (st == AT_UB) & ~fin_hi] = np.where(fin_lo, AT_LB, FREE)[small & (st == AT_UB) & ~fin_hi]
        new[nb & fixed] = AT_LB
        changed = bool(np.any(new != st))
        self.status = new
        return changed

    def _artificial_active(self) -> np.ndarray:
        st = self.status
        return np.nonzero(
            ((st == AT_LB) & ~np.isfinite(self.lb)) | ((st == AT_UB) & ~np.isfinite(self.ub))
        )[0]

    # ------------------------------------------------------------------
    # problem modification

    def set_bounds(self, j: int, lo: float, hi: float):
        if lo > hi:
            raise LpError(f"empty bound interval for variable {j}")
        self.lb[j] = lo
        self.ub[j] = hi
        self._fresh = True

    def set_all_bounds(self, lo: np.ndarray, hi: np.ndarray):
        self.lb[: self.n] = lo
        self.ub[: self.n] = hi
        self._fresh = True

    def add_rows(self, rows_A, senses: Sequence[str], rhs):
        """Append rows; their slacks enter the basis."""
        rows_A = sp.csr_matrix(rows_A, dtype=float)
        k = rows_A.shape[0]
        if k == 0:
            return
        m0 = self.m
        s_lo, s_hi = slack_bounds(senses)
        # insert slack columns after the existing ones
        self.cost = np.concatenate([self.cost, np.zeros(k)])
        self.work = np.concatenate([self.work, np.zeros(k)])
        self.lb = np.concatenate([self.lb, s_lo])
        self.ub = np.concatenate([self.ub, s_hi])
        self.status = np.concatenate([self.status, np.full(k, BASIC, dtype=np.int8)])
        self.x = np.concatenate([self.x, np.zeros(k)])
        if hasattr(self, "d"):
            self.d = np.concatenate([self.d, np.zeros(k)])
        self.A = _append_rows_csc(self.A, rows_A)
        self._ensure_AT()
        self.b = np.concatenate([self.b, np.asarray(rhs, dtype=float)])
        self.senses += list(senses)
        new_slacks = np.arange(self.n + m0, self.n + m0 + k)
        self.basic = np.concatenate([self.basic, new_slacks])
        # new basis [[B, 0], [R_B, I]]; row i of its inverse is [-(R_B B^-1)_i, e_i]
        new_w = np.ones(k)
        struct = self.basic[:m0] < self.n
        if m0 and np.any(struct) and k <= 64:
            RB = np.zeros((k, m0))
            RB[:, struct] = rows_A[:, self.basic[:m0][struct]].toarray()
            for i in range(k):
                if np.any(RB[i]):
                    new_w[i] += float(np.sum(self.factor.btran(RB[i]) ** 2))
        self.weights = np.concatenate([self.weights, new_w])
        self.m = m0 + k
        if not self.refactor():
            raise LpError("basis became singular while appending rows")
        r = self.b[m0:] - rows_A @ self.x[: self.n]
        self.x[new_slacks] = r
        self._fresh = True

    def remove_rows(self, rows: Sequence[int]) -> list[int]:
        """Delete rows whose slack is basic; returns the rows actually removed."""
        rows = sorted(set(int(r) for r in rows))
        keep_rows = np.ones(self.m, dtype=bool)
        removed = []
        pos_of = {int(v): i for i, v in enumerate(self.basic)}
        drop_pos = []
        for r in rows:
            sj = self.n + r
            if self.status[sj] == BASIC:
                keep_rows[r] = False
                drop_pos.append(pos_of[sj])
                removed.append(r)
        if not removed:
            return []
        keep_pos = np.ones(self.m, dtype=bool)
        keep_pos[drop_pos] = False
        self.weights = self.weights[keep_pos]
        old_to_new = -np.ones(self.n + self.m, dtype=int)
        keep_vars = np.concatenate([np.ones(self.n, dtype=bool), keep_rows])
        old_to_new[keep_vars] = np.arange(int(keep_vars.sum()))
        self.basic = old_to_new[self.basic[keep_pos]]
        self.cost = self.cost[keep_vars]
        self.work = self.work[keep_vars]
        self.lb = self.lb[keep_vars]
        self.ub = self.ub[keep_vars]
        self.status = self.status[keep_vars]
        self.x = self.x[keep_vars]
        if hasattr(self, "d"):
            self.d = self.d[keep_vars]
        self.A = _keep_rows_csc(self.A, keep_rows)
        self._ensure_AT()
        self.b = self.b[keep_rows]
        self.senses = [s for s, k in zip(self.senses, keep_rows) if k]
        self.m = int(keep_rows.sum())
        # dropping a row together with its basic slack leaves a nonsingular basis
        if not self.refactor():
            raise LpError("basis became singular while removing rows")
        return removed

    def get_basis(self) -> tuple:
        return self.basic.copy(), self.status.copy()

    def reset_basis(self):
        """Fall back to the all-slack basis."""
        self.basic = np.arange(self.n, self.n + self.m)
        self.status = np.full(self.n + self.m, AT_LB, dtype=np.int8)
        self.status[self.basic] = BASIC
        self.factor = _BasisFactor(sp.identity(self.m, format="csc"))
        self.weights = np.ones(self.m)
        self._fresh = True

    def set_basis(self, basis: tuple) -> bool:
        basic, status = basis
        if len(basic) != self.m or len(status) != self.n + self.m:
            return False
        self.basic = np.asarray(basic).copy()
        self.status = np.asarray(status, dtype=np.int8).copy()
        self.weights = np.ones(self.m)
        ok = self.refactor()
        self._fresh = True
        return ok

    # ------------------------------------------------------------------
    # solve

    def _dual_value(self) -> float:
        """Lower bound on the true optimum from the current dual-feasible basis."""
        diff = self.work - self.cost
        shifted = diff != 0
        if not np.any(shifted):
            return self.objective()
        reach = np.maximum(np.abs(self.lb[shifted]), np.abs(self.ub[shifted]))
        if not np.all(np.isfinite(reach)):
            return -np.inf
        return float(self.work @ self.x) - float(np.abs(diff[shifted]) @ reach)

    def objective(self) -> float:
        return float(self.cost[: self.n] @ self.x[: self.n])

    def solve(
        self,
        max_iter: int = 100_000,
        cutoff: float = np.inf,
        deadline: float | None = None,
    ) -> str:
        """Re-optimize from the current basis.

        ``cutoff`` stops early once the (monotone) dual objective exceeds it.
        """
        shifting = True
        if np.any(self.pert) or np.any(self.work != self.cost):
            self.work = self.cost.copy()
            self.work[: self.n] += self.pert
            self._recompute_dual()
            self._fresh = True
        elif not hasattr(self, "d"):
            self._recompute_dual()
            self._fresh = True
        if self._fresh:
            self._restore_dual_feasibility(shifting)
            self._recompute_primal()
            self._fresh = False
        passes = 0
        degenerate = 0
        start_iter = self.iterations
        tol = self.tol
        while True:
            if self.iterations - start_iter >= max_iter:
                return ITERATION_LIMIT
            if deadline is not None and (self.iterations & 15) == 0 and time.monotonic() > deadline:
                return TIME_LIMIT
            if self.factor.updates >= self.refactor_every:
                if not self.refactor():
                    return NUMERICAL
                self._fresh = False
                self._recompute_dual()
                self._restore_dual_feasibility(shifting)
                self._recompute_primal()
            if self.m == 0:
                break
            xb = self.x[self.basic]
            lbB = self.lb[self.basic]
            ubB = self.ub[self.basic]
            below = lbB - xb
            above = xb - ubB
            infeas = np.maximum(below, above)
            scale = tol * (1.0 + np.maximum(np.abs(np.where(below > above, lbB, ubB)), 0.0))
            scale = np.where(np.isfinite(scale), scale, tol)
            cand = infeas > scale
            if not np.any(cand) and shifting and np.any(self.work != self.cost):
                # optimal for the shifted costs: restore the true ones and finish
                shifting = False
                self.work = self.cost.copy()
                self._recompute_dual()
                self._restore_dual_feasibility()
                self._recompute_primal()
                continue
            if not np.any(cand):
                art = self._artificial_active()
                if art.size == 0:
                    break
                if np.any(np.abs(self.d[art]) > tol) or passes >= 3:
                    return UNBOUNDED
                # artificial placements that the duals no longer need
                passes += 1
                self.status[art] = FREE
                self._recompute_primal()
                continue
            if np.isfinite(cutoff) and self._dual_value() > cutoff:
                return CUTOFF
            bland = degenerate >= self.bland_after
            if bland:
                idx = np.nonzero(cand)[0]
                r = int(idx[np.argmin(self.basic[idx])])
            else:
                score = np.where(cand, infeas * infeas / self.weights, -1.0)
                r = int(np.argmax(score))
            leaving = int(self.basic[r])
            go_low = below[r] > above[r]  # leaving variable rises to its lower bound
            target = lbB[r] if go_low else ubB[r]
            e_r = np.zeros(self.m)
            e_r[r] = 1.0
            rho = self.factor.btran(e_r)
            alpha = np.empty(self.n + self.m)
            alpha[: self.n] = self.AT @ rho
            alpha[self.n:] = rho
            a = -alpha if go_low else alpha
            q, t, flips = self._ratio_test(a, bland, max(below[r], above[r]))
            if q < 0:
                return INFEASIBLE
            if flips.size:
                # boxed variables passed by the long step switch bounds
                self.status[flips] = np.where(self.status[flips] == AT_LB, AT_UB, AT_LB).astype(np.int8)
                delta = np.where(self.status[flips] == AT_UB, 1.0, -1.0) * (self.ub[flips] - self.lb[flips])
                self.x[flips] += delta
                shift = np.zeros(self.m)
                structural = flips < self.n
                if np.any(structural):
                    shift += self.A[:, flips[structural]] @ delta[structural]
                shift[flips[~structural] - self.n] += delta[~structural]
                self.x[self.basic] -= self.factor.ftran(shift)
            col = self._ftran(q)
            piv = col[r]
            if abs(piv) < self.piv_tol or abs(piv - alpha[q]) > 1e-6 * (1 + abs(piv)):
                # inverse has drifted; rebuild and retry this iteration
                if self.factor.updates == 0:
                    return NUMERICAL
                if not self.refactor():
                    return NUMERICAL
                self._recompute_dual()
                self._restore_dual_feasibility(shifting)
                self._recompute_primal()
                continue
            # dual update
            nb = self.status != BASIC
            self.d[nb] -= t * a[nb]
            self.d[q] = 0.0
            self.d[leaving] = -t * (-1.0 if go_low else 1.0)
            degenerate = degenerate + 1 if t <= 1e-12 else 0
            # primal update
            theta = (self.x[leaving] - target) / piv
            self.x[self.basic] -= theta * col
            self.x[q] += theta
            self.x[leaving] = target
            # steepest-edge weights
            tau = self.factor.ftran(rho)
            ratio = col / piv
            w_r = self.weights[r]
            with np.errstate(over="ignore", invalid="ignore"):
                w = self.weights - 2.0 * ratio * tau + ratio * ratio * w_r
                w[r] = w_r / (piv * piv)
            self.weights = np.clip(np.where(np.isfinite(w), w, 1.0), 1e-8, 1e12)
            self.factor.update(r, col)
            self.basic[r] = q
            self.status[q] = BASIC
            self.status[leaving] = AT_LB if go_low else AT_UB
            if self.lb[leaving] == self.ub[leaving]:
                self.status[leaving] = AT_LB
            self.iterations += 1
        return OPTIMAL

    def _ratio_test(self, a: np.ndarray, bland: bool, slope: float = 0.0) -> tuple[int, float, np.ndarray]:
        """Dual ratio test on ``d_j - t a_j`` with bound flipping and Harris tolerances.

        Boxed candidates are passed over (and returned for flipping) while the
        primal infeasibility ``slope`` of the leaving row stays positive.
        """
        none = np.zeros(0, dtype=int)
        tol = self.tol
        nb = self.status != BASIC
        movable = nb & (self.lb < self.ub)
        st = self.status
        at_lb = movable & (st == AT_LB) & (a > self.piv_tol)
        at_ub = movable & (st == AT_UB) & (a < -self.piv_tol)
        free = movable & (st == FREE) & (np.abs(a) > self.piv_tol)
        elig = at_lb | at_ub | free
        if not np.any(elig):
            return -1, 0.0, none
        idx = np.nonzero(elig)[0]
        aj = a[idx]
        dj = self.d[idx]
        ratio = np.maximum(dj / aj, 0.0)
        ratio[st[idx] == FREE] = 0.0
        if bland:
            tmin = ratio.min()
            ties = idx[ratio <= tmin + 1e-12]
            q = int(ties.min())
            return q, float(max(self.d[q] / a[q], 0.0)) if st[q] != FREE else 0.0, none
        relaxed = (dj + np.sign(aj) * tol) / aj
        relaxed[st[idx] == FREE] = 0.0
        flips = none
        width = self.ub[idx] - self.lb[idx]
        boxed = np.isfinite(width)
        if slope > 0 and np.any(boxed):
            order = np.argsort(ratio, kind="stable")
            drop = np.abs(aj[order]) * np.where(boxed[order], width[order], np.inf)
            remaining = slope - np.cumsum(drop)
            # breakpoints passed while the slope is still positive afterwards
            npass = int(np.argmax(remaining <= 0)) if np.any(remaining <= 0) else order.size - 1
            if npass > 0:
                passed = order[:npass]
                keep = np.ones(idx.size, dtype=bool)
                keep[passed] = False
                flips = idx[passed]
                idx, aj, ratio, relaxed = idx[keep], aj[keep], ratio[keep], relaxed[keep]
                # Harris below never picks a ratio under the last flipped one
                floor = float(np.max(np.maximum(self.d[flips] / a[flips], 0.0)))
                ratio = np.maximum(ratio, floor)
                relaxed = np.maximum(relaxed, floor)
        tmax = relaxed.min()
        ok = ratio <= tmax
        pick = np.argmax(np.where(ok, np.abs(aj), -1.0))
        q = int(idx[pick])
        return q, float(ratio[pick]), flips

    # ------------------------------------------------------------------
    # results

    def primal(self) -> np.ndarray:
        return self.x[: self.n].copy()

    def row_activity(self) -> np.ndarray:
        return self.A @ self.x[: self.n]

    def duals(self) -> np.ndarray:
        return self._duals()

    def reduced_costs(self) -> np.ndarray:
        y = self._duals()
        return self.cost[: self.n] - (self.AT @ y if self.m else 0.0)


def _engine_for(p: LpProblem, tol: float, perturb: float = 0.0) -> DualSimplex:
    return DualSimplex(p.objective, p.A, p.senses, p.rhs, p.lower, p.upper, tol=tol, perturb=perturb)


def _solution(eng: DualSimplex, status: str) -> LpSolution:
    if status == OPTIMAL:
        x = eng.primal()
        return LpSolution(
            status=OPTIMAL,
            x=x,
            duals=eng.duals(),
            reduced_costs=eng.reduced_costs(),
            objective=float(eng.cost[: eng.n] @ x),
            iterations=eng.iterations,
            basis=eng.get_basis(),
        )
    nan = np.full(eng.n, np.nan)
    obj = {INFEASIBLE: np.inf, UNBOUNDED: -np.inf}.get(status, np.nan)
    return LpSolution(status, nan, np.full(eng.m, np.nan), nan, obj, eng.iterations)


def _drop_empty_rows(p: LpProblem) -> tuple[LpProblem, np.ndarray, Optional[str]]:
    A = sp.csr_matrix(p.A)
    nnz = np.diff(A.indptr)
    empty = nnz == 0
    if not np.any(empty):
        return p, np.arange(p.num_rows), None
    for i in np.nonzero(empty)[0]:
        s, r = p.senses[i], p.rhs[i]
        # 0 <sense> r must hold on its own
        if (s == "<=" and r < -1e-9) or (s == ">=" and r > 1e-9) or (s == "==" and abs(r) > 1e-9):
            return p, np.arange(p.num_rows), INFEASIBLE
    keep = np.nonzero(~empty)[0]
    q = LpProblem(p.objective, A[keep], [p.senses[i] for i in keep], p.rhs[keep], p.lower, p.upper)
    return q, keep, None


def solve_lp(p: LpProblem, tol: float = 1e-7, max_iter: int = 100_000, perturb: float = 0.0) -> LpSolution:
    """Solve an LP with the bounded dual simplex.

    Duals follow ``y = c_B B^-1`` so that reduced costs are ``c - A'y``;
    for a minimization they are nonpositive on binding ``<=`` rows.
    """
    q, keep, status = _drop_empty_rows(p)
    if status is not None:
        n = p.num_vars
        return LpSolution(status, np.full(n, np.nan), np.full(p.num_rows, np.nan), np.full(n, np.nan), np.inf, 0)
    eng = _engine_for(q, tol, perturb)
    status = eng.solve(max_iter=max_iter)
    if status == UNBOUNDED:
        status = _confirm_unbounded(q, tol, max_iter)
    sol = _solution(eng, status)
    if q is not p and sol.status == OPTIMAL:
        duals = np.zeros(p.num_rows)
        duals[keep] = sol.duals
        sol.duals = duals
    return sol


def _confirm_unbounded(p: LpProblem, tol: float, max_iter: int) -> str:
    # An LP is unbounded iff it is feasible and the recession direction
    # improves the objective; check feasibility with a zero objective.
    eng = DualSimplex(np.zeros(p.num_vars), p.A, p.senses, p.rhs, p.lower, p.upper, tol=tol)
    st = eng.solve(max_iter=max_iter)
    if st == INFEASIBLE:
        return INFEASIBLE
    return UNBOUNDED


def add_rows_and_resolve(
    p: LpProblem, prev: LpSolution, new_rows: Sequence[tuple], tol: float = 1e-7
) -> tuple[LpProblem, LpSolution]:
    """Append rows to ``p`` and re-solve warm-started from ``prev``'s basis.

    Returns the augmented problem together with its solution; the result is
    the same as solving the augmented problem from scratch.
    """
    aug = p.with_rows(new_rows)
    if prev.basis is None or prev.status != OPTIMAL or np.any(np.diff(sp.csr_matrix(p.A).indptr) == 0):
        return aug, solve_lp(aug, tol)
    eng = _engine_for(p, tol)
    if not eng.set_basis(prev.basis):
        return aug, solve_lp(aug, tol)
    extra = np.array([np.asarray(r[0], dtype=float) for r in new_rows]).reshape(len(new_rows), -1)
    eng.add_rows(extra, [r[1] for r in new_rows], [float(r[2]) for r in new_rows])
    status = eng.solve()
    if status not in (OPTIMAL, INFEASIBLE):
        return aug, solve_lp(aug, tol)
    return aug, _solution(eng, status)


def format_lp(p: LpProblem, name: str = "lp") -> str:
    """Render an LP in the line-oriented model text format (no integers)."""
    from .formulation import MiqpModel, Variable, LinearRow, format_model

    A = sp.csr_matrix(p.A)
    variables = [Variable(f"x[{j}]", float(p.lower[j]), float(p.upper[j]), "C") for j in range(p.num_vars)]
    rows = []
    for i in range(p.num_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        rows.append(LinearRow(f"r[{i}]", A.indices[lo:hi].copy(), A.data[lo:hi].copy(), p.senses[i], float(p.rhs[i])))
    m = MiqpModel(variables=variables, rows=rows, epigraphs=[], objective=p.objective.copy(), name=name)
    return format_model(m)
