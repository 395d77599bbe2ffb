"""Cross-validated benchmarking, oracle self-checks and the synthetic instances they use."""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .bnb import BnbConfig, SolveResult, brute_force_oracle, solve_miqp
from .baseline_cart import CartConfig, fit_cart
from .classifier import TreeClassifier, accuracy, extract_tree
from .dataset import (
    Dataset,
    DataError,
    apply_normalization,
    from_labels,
    holdout_split,
    load_csv,
    normalize,
    stratified_folds,
    stratified_subsample,
)
from .formulation import CostConfig, ModelOptions, build_model
from .heuristics import starting_incumbents
from .topology import build_topology

FULL_C12_GRID = tuple(10.0**i for i in range(-5, 6))
FULL_C3_GRID = tuple(10.0**i for i in range(-2, 3))
SMALL_GRID = (0.01, 1.0, 100.0)
METHODS = ("moctsvm", "cart")


class SolverFailure(RuntimeError):
    """A fit produced no usable tree."""


@dataclass(frozen=True)
class ExperimentConfig:
    data: tuple[str, ...]
    method: str = "moctsvm"
    depth: int = 2
    c1_grid: tuple[float, ...] = FULL_C12_GRID
    c2_grid: tuple[float, ...] = FULL_C12_GRID
    c3_grid: tuple[float, ...] = FULL_C3_GRID
    folds: int = 5
    repeats: int = 5
    time_limit: float = 300.0
    seed: int = 0
    out_dir: Optional[str] = None
    label_column: Optional[str | int] = None
    subsample: Optional[int] = None  # stratified subsample size drawn before the folds
    inner_fraction: float = 0.2
    # limits for the inner tuning fits; None reuses the final-fit limit
    tuning_time_limit: Optional[float] = None
    tuning_node_limit: Optional[int] = None
    node_limit: int = 1_000_000
    deterministic: bool = True
    cart_min_leaf: float = 0.05

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.data:
            raise ValueError("at least one dataset is required")
        for name in ("c1_grid", "c2_grid", "c3_grid"):
            grid = getattr(self, name)
            if not grid or any(not (v > 0 and math.isfinite(v)) for v in grid):
                raise ValueError(f"{name} must be a non-empty list of positive numbers")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.folds < 2 or self.repeats < 1:
            raise ValueError("need folds >= 2 and repeats >= 1")
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if self.tuning_time_limit is not None and not self.tuning_time_limit > 0:
            raise ValueError("tuning_time_limit must be positive")
        if not 0 < self.inner_fraction < 1:
            raise ValueError("inner_fraction must lie in (0, 1)")

    def with_small_grid(self) -> "ExperimentConfig":
        return replace(self, c1_grid=SMALL_GRID, c2_grid=SMALL_GRID, c3_grid=SMALL_GRID)

    def grid(self) -> list[dict]:
        if self.method == "cart":
            return [{"max_active_nodes": a} for a in range(1, 2**self.depth)]
        return [{"c1": a, "c2": b, "c3": c} for a in self.c1_grid for b in self.c2_grid for c in self.c3_grid]


# ----------------------------------------------------------------------
# fitting


def bnb_config(time_limit: float, deterministic: bool = True, node_limit: int = 1_000_000, **kw) -> BnbConfig:
    return BnbConfig(time_limit=time_limit, deterministic=deterministic, node_limit=node_limit, **kw)


def fit_moctsvm(
    train: Dataset,
    depth: int,
    costs: CostConfig,
    cfg: BnbConfig,
    options: Optional[ModelOptions] = None,
) -> tuple[TreeClassifier, SolveResult]:
    """Build the model on normalized ``train``, seed it with heuristic trees and solve."""
    topo = build_topology(depth)
    m = build_model(train, topo, costs, options or ModelOptions())
    r = solve_miqp(m, cfg, starting_incumbents(m))
    if r.incumbent is None:
        raise SolverFailure(f"no incumbent ({r.status})")
    return extract_tree(r, train, topo, model=m), r


def fit_method(
    method: str, train: Dataset, depth: int, point: dict, cfg: BnbConfig, min_leaf: float
) -> tuple[TreeClassifier, Optional[SolveResult]]:
    if method == "cart":
        return fit_cart(train, CartConfig(depth, min_leaf, point["max_active_nodes"])), None
    return fit_moctsvm(train, depth, CostConfig(point["c1"], point["c2"], point["c3"]), cfg)


def _selection_key(point: dict, acc: float) -> tuple:
    # best accuracy, then the simpler model
    if "max_active_nodes" in point:
        return (-acc, point["max_active_nodes"])
    return (-acc, point["c3"], point["c2"], point["c1"])


def training_hash(d: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(d.raw_X(), dtype=float).tobytes())
    h.update(np.ascontiguousarray(d.y, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


# ----------------------------------------------------------------------
# reports


@dataclass
class FoldResult:
    repeat: int
    fold: int
    accuracy: float
    chosen: dict
    status: Optional[str]
    gap: Optional[float]
    nodes: Optional[int]
    train_hash: str
    wall_time: float = 0.0


@dataclass
class MethodReport:
    dataset: str
    method: str
    n: int
    p: int
    K: int
    folds: list[FoldResult] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([f.accuracy for f in self.folds])

    @property
    def mean_accuracy(self) -> float:
        if not self.folds:
            raise SolverFailure(f"{self.dataset}/{self.method}: no successful fits")
        return float(self.accuracies.mean())

    @property
    def sd_accuracy(self) -> float:
        a = self.accuracies
        return float(a.std(ddof=1)) if a.size > 1 else 0.0

    @property
    def mean_gap(self) -> Optional[float]:
        gaps = [f.gap for f in self.folds if f.gap is not None]
        return float(np.mean(gaps)) if gaps else None

    @property
    def mean_wall_time(self) -> float:
        return float(np.mean([f.wall_time for f in self.folds])) if self.folds else 0.0

    def chosen_per_repeat(self) -> dict:
        out: dict = {}
        for f in self.folds:
            out.setdefault(str(f.repeat), []).append(f.chosen)
        return out

    def to_dict(self, include_timing: bool = False) -> dict:
        folds = []
        for f in self.folds:
            row = asdict(f)
            if not include_timing:
                row.pop("wall_time")
            folds.append(row)
        doc = {
            "dataset": self.dataset,
            "method": self.method,
            "n": self.n,
            "p": self.p,
            "K": self.K,
            "mean_accuracy": self.mean_accuracy if self.folds else None,
            "sd_accuracy": self.sd_accuracy if self.folds else None,
            "mean_gap": self.mean_gap,
            "chosen_per_repeat": self.chosen_per_repeat(),
            "folds": folds,
            "failures": self.failures,
        }
        if include_timing:
            doc["mean_wall_time"] = self.mean_wall_time
        return doc


@dataclass
class BenchReport:
    rows: list[MethodReport] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        return {"settings": self.settings, "rows": [r.to_dict(include_timing) for r in self.rows]}

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True, default=_jsonable)

    def to_text(self, include_timing: bool = False) -> str:
        head = f"{'dataset':<16} {'(n,p,K)':<14} {'method':<8} {'accuracy':>16} {'mean gap':>9}"
        if include_timing:
            head += f" {'time/fit':>9}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            acc = f"{100 * r.mean_accuracy:6.2f} ± {100 * r.sd_accuracy:5.2f}" if r.folds else "no fits"
            gap = "-" if r.mean_gap is None else f"{100 * r.mean_gap:8.2f}%"
            line = f"{r.dataset:<16} {f'({r.n},{r.p},{r.K})':<14} {r.method:<8} {acc:>16} {gap:>9}"
            if include_timing:
                line += f" {r.mean_wall_time:8.2f}s"
            lines.append(line)
            for msg in r.failures:
                lines.append(f"  failure: {msg}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        """``report.json``/``report.txt`` are timing-free and reproducible; ``timing.json`` is not."""
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "report.txt").write_text(self.to_text())
        (out / "timing.json").write_text(self.to_json(include_timing=True))


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ----------------------------------------------------------------------
# cross-validation


def _dataset_name(path: str) -> str:
    from pathlib import Path

    return Path(path).stem


def tune(cfg: ExperimentConfig, raw_train: Dataset, seed: int) -> dict:
    """Grid point with the best accuracy on an inner holdout of the (unnormalized) training split."""
    grid = cfg.grid()
    if len(grid) == 1:
        return grid[0]
    fit_idx, val_idx = holdout_split(raw_train, cfg.inner_fraction, seed)
    inner = normalize(raw_train.subset(fit_idx))
    val = apply_normalization(raw_train.subset(val_idx), inner.normalization)
    tl = cfg.tuning_time_limit or cfg.time_limit
    nl = cfg.tuning_node_limit if cfg.tuning_node_limit is not None else cfg.node_limit
    bcfg = bnb_config(tl, cfg.deterministic, nl)
    best = None
    for point in grid:
        try:
            clf, _ = fit_method(cfg.method, inner, cfg.depth, point, bcfg, cfg.cart_min_leaf)
        except SolverFailure:
            continue
        key = _selection_key(point, accuracy(clf, val))
        if best is None or key < best[0]:
            best = (key, point)
    if best is None:
        raise SolverFailure("every grid point failed during tuning")
    return best[1]


def run_crossval(cfg: ExperimentConfig, progress=None) -> BenchReport:
    """Repeated stratified k-fold evaluation with inner-holdout tuning."""
    report = BenchReport(settings=_settings(cfg))
    for path in cfg.data:
        d = load_csv(path, cfg.label_column)
        if cfg.subsample is not None:
            d = stratified_subsample(d, cfg.subsample, cfg.seed)
        plan = stratified_folds(d, cfg.folds, cfg.repeats, cfg.seed)
        row = MethodReport(_dataset_name(path), cfg.method, d.n, d.p, d.K)
        final = bnb_config(cfg.time_limit, cfg.deterministic, cfg.node_limit)
        for rep, fold, tr, te in plan.splits():
            raw_train = d.subset(tr)
            train = normalize(raw_train)
            test = apply_normalization(d.subset(te), train.normalization)
            split_seed = cfg.seed * 1_000_003 + rep * 101 + fold
            t0 = time.monotonic()
            try:
                point = tune(cfg, raw_train, split_seed)
                clf, res = fit_method(cfg.method, train, cfg.depth, point, final, cfg.cart_min_leaf)
            except SolverFailure as exc:
                row.failures.append(f"repeat {rep} fold {fold}: {exc}")
                continue
            row.folds.append(
                FoldResult(
                    repeat=rep,
                    fold=fold,
                    accuracy=accuracy(clf, test),
                    chosen=point,
                    status=None if res is None else res.status,
                    gap=None if res is None else float(res.gap),
                    nodes=None if res is None else int(res.nodes_explored),
                    train_hash=training_hash(raw_train),
                    wall_time=time.monotonic() - t0,
                )
            )
            if progress:
                progress(f"{row.dataset} {cfg.method} repeat {rep} fold {fold}: acc {row.folds[-1].accuracy:.4f}")
        if not row.folds:
            raise SolverFailure(f"{row.dataset}: zero successful fits")
        report.rows.append(row)
    return report


def _settings(cfg: ExperimentConfig) -> dict:
    s = asdict(cfg)
    s.pop("out_dir")
    s["data"] = [_dataset_name(p) for p in cfg.data]
    return s


# ----------------------------------------------------------------------
# oracle self-check and synthetic instances


@dataclass
class OracleSummary:
    trials: int
    max_deviation: float
    failures: int
    lines: list[str]

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_text(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return "\n".join(self.lines + [f"{verdict}: {self.trials} trials, max relative deviation {self.max_deviation:.3e}"]) + "\n"


def random_oracle_instance(rng: np.random.Generator, max_n: int = 8, p: int = 2, max_K: int = 3) -> tuple[Dataset, CostConfig]:
    n = int(rng.integers(4, max_n + 1))
    K = int(rng.integers(2, max_K + 1))
    X = rng.random((n, p))
    y = rng.integers(1, K + 1, n)
    y[:K] = np.arange(1, K + 1)  # every class present
    d = normalize(from_labels(X, [int(v) for v in y]))
    costs = CostConfig(
        float(rng.choice(FULL_C12_GRID)), float(rng.choice(FULL_C12_GRID)), float(rng.choice(FULL_C3_GRID))
    )
    return d, costs


def oracle_check(seed: int, trials: int, tol: float = 1e-6, max_n: int = 8, cfg: Optional[BnbConfig] = None) -> OracleSummary:
    """Compare branch-and-bound against depth-1 enumeration on random tiny instances."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = cfg or BnbConfig()
    rng = np.random.default_rng(seed)
    worst, bad, lines = 0.0, 0, []
    for i in range(trials):
        d, costs = random_oracle_instance(rng, max_n)
        ref, _ = brute_force_oracle(d, costs)
        r = solve_miqp(build_model(d, build_topology(1), costs), cfg)
        dev = abs(r.objective - ref) / max(1.0, abs(ref))
        worst = max(worst, dev)
        ok = dev <= tol and r.status == "optimal"
        bad += not ok
        lines.append(
            f"trial {i}: n={d.n} K={d.K} c=({costs.c1:g},{costs.c2:g},{costs.c3:g}) "
            f"oracle={ref:.9g} bnb={r.objective:.9g} status={r.status} dev={dev:.2e} {'ok' if ok else 'MISMATCH'}"
        )
    return OracleSummary(trials, worst, bad, lines)


def four_cluster_toy(seed: int = 0, per_class: int = 10, spread: float = 0.06) -> Dataset:
    """Four well-separated Gaussian blobs in the unit square, one class each."""
    rng = np.random.default_rng(seed)
    centers = np.array([[0.2, 0.2], [0.2, 0.8], [0.8, 0.2], [0.8, 0.8]])
    X = np.vstack([c + spread * rng.standard_normal((per_class, 2)) for c in centers])
    y = np.repeat([1, 2, 3, 4], per_class)
    return normalize(from_labels(X, [int(v) for v in y]))


def separable_toy(seed: int = 0, n: int = 20) -> Dataset:
    """Two classes split by a wide margin along the first feature."""
    rng = np.random.default_rng(seed)
    half = n // 2
    X = np.vstack([rng.uniform([0.0, 0.0], [0.3, 1.0], (half, 2)), rng.uniform([0.7, 0.0], [1.0, 1.0], (n - half, 2))])
    y = [1] * half + [2] * (n - half)
    return from_labels(X, y, ["x1", "x2"])
