"""Labeled data: CSV ingestion, unit-box normalization and stratified folds."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for unreadable or unusable input data."""


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray  # class ids 1..K
    feature_names: tuple[str, ...]
    class_names: tuple[str, ...]
    normalization: Optional[np.ndarray] = None  # (p, 2) array of (min, max)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=int)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
            raise DataError(f"X of shape {X.shape} does not match {y.size} labels")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if y.size and (y.min() < 1 or y.max() > len(self.class_names)):
            raise DataError("labels must lie in 1..K")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return len(self.class_names)

    @property
    def Y(self) -> np.ndarray:
        """One-hot label matrix, ``Y[i, k-1] == 1`` iff ``y[i] == k``."""
        Y = np.zeros((self.n, self.K), dtype=int)
        Y[np.arange(self.n), self.y - 1] = 1
        return Y

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y - 1, minlength=self.K)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return replace(self, X=self.X[idx], y=self.y[idx])

    def raw_X(self) -> np.ndarray:
        """Feature values in original units."""
        if self.normalization is None:
            return self.X
        lo, hi = self.normalization[:, 0], self.normalization[:, 1]
        return self.X * np.where(hi > lo, hi - lo, 0.0) + lo


def load_csv(path, label_column: str | int | None = None) -> Dataset:
    """Read a comma-separated file with a header row.

    ``label_column`` is a column name or 0-based index (default: last column).
    Labels are re-encoded as 1..K in order of first appearance.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if any(c.strip() for c in r)]
    if label_column is None:
        li = len(header) - 1
    elif isinstance(label_column, int) or str(label_column).lstrip("-").isdigit():
        li = int(label_column)
        if li < 0:
            li += len(header)
        if not 0 <= li < len(header):
            raise DataError(f"label column index {label_column} out of range")
    else:
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not in header")
        li = header.index(label_column)
    feat_cols = [j for j in range(len(header)) if j != li]
    X = np.empty((len(body), len(feat_cols)))
    labels = []
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"row {r + 1}: expected {len(header)} cells, got {len(row)}")
        for c, j in enumerate(feat_cols):
            try:
                v = float(row[j])
            except ValueError:
                raise DataError(f"row {r + 1}, column {header[j]!r}: cannot parse {row[j]!r}") from None
            if not math.isfinite(v):
                raise DataError(f"row {r + 1}, column {header[j]!r}: non-finite value {row[j]!r}")
            X[r, c] = v
        labels.append(row[li].strip())
    return from_labels(X, labels, [header[j] for j in feat_cols])


def from_labels(X, labels: Sequence, feature_names: Sequence[str] | None = None) -> Dataset:
    """Build a Dataset from arbitrary labels, encoded by first appearance."""
    X = np.asarray(X, dtype=float)
    codes: dict = {}
    for lab in labels:
        codes.setdefault(lab, len(codes) + 1)
    if len(codes) < 2:
        raise DataError("classification needs at least two distinct labels")
    y = np.array([codes[lab] for lab in labels], dtype=int)
    names = feature_names or [f"x{j}" for j in range(X.shape[1])]
    return Dataset(X, y, tuple(names), tuple(str(c) for c in codes))


def normalize(d: Dataset) -> Dataset:
    """Min-max scale every feature into [0, 1]; constant columns map to 0.

    The (min, max) pairs are stored so that test data can be mapped with
    :func:`apply_normalization`.  Normalizing twice is a no-op.
    """
    if d.n == 0:
        raise DataError("cannot normalize an empty dataset")
    if d.normalization is not None:
        return d
    lo = d.X.min(axis=0)
    hi = d.X.max(axis=0)
    return replace(d, X=_scale(d.X, lo, hi), normalization=np.column_stack([lo, hi]))


def _scale(X, lo, hi) -> np.ndarray:
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    Z = np.where(span > 0, (X - lo) / safe, 0.0)
    return np.clip(Z, 0.0, 1.0)


def scale_features(X, normalization: Optional[np.ndarray]) -> np.ndarray:
    """Map raw feature rows with stored (min, max) pairs, clamped to [0, 1]."""
    X = np.asarray(X, dtype=float)
    if normalization is None:
        return X
    return _scale(X, normalization[:, 0], normalization[:, 1])


def apply_normalization(d: Dataset, normalization: np.ndarray) -> Dataset:
    """Normalize ``d`` with another split's (min, max), clamping to [0, 1]."""
    return replace(d, X=scale_features(d.raw_X(), normalization), normalization=np.asarray(normalization))


@dataclass(frozen=True)
class FoldPlan:
    k: int
    repeats: int
    seed: int
    assignments: tuple[tuple[int, ...], ...] = field(repr=False)  # fold ids 1..k

    def splits(self):
        """Yield ``(repeat, fold, train_idx, test_idx)`` for every split."""
        for r, assign in enumerate(self.assignments):
            a = np.asarray(assign)
            for f in range(1, self.k + 1):
                yield r, f, np.nonzero(a != f)[0], np.nonzero(a == f)[0]

    def to_json(self) -> str:
        return json.dumps(
            {"k": self.k, "repeats": self.repeats, "seed": self.seed, "assignments": [list(a) for a in self.assignments]}
        )

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        doc = json.loads(text)
        return cls(doc["k"], doc["repeats"], doc["seed"], tuple(tuple(a) for a in doc["assignments"]))


def stratified_folds(d: Dataset, k: int, repeats: int = 1, seed: int = 0) -> FoldPlan:
    """Repeated stratified k-fold assignment.

    Each class is shuffled and dealt round-robin onto the folds, continuing
    from where the previous class stopped.  Per-class fold counts then differ
    by at most one, and so do the overall fold sizes.
    """
    if k < 2:
        raise DataError("need k >= 2 folds")
    if k > d.n:
        raise DataError(f"k={k} exceeds the number of observations {d.n}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(repeats):
        assign = np.zeros(d.n, dtype=int)
        offset = int(rng.integers(k))
        for cls in range(1, d.K + 1):
            members = np.nonzero(d.y == cls)[0]
            members = members[rng.permutation(members.size)]
            assign[members] = (offset + np.arange(members.size)) % k + 1
            offset = (offset + members.size) % k
        out.append(tuple(int(a) for a in assign))
    return FoldPlan(k, repeats, seed, tuple(out))


def stratified_subsample(d: Dataset, size: int, seed: int = 0) -> Dataset:
    """Class-proportional random subsample of ``size`` observations."""
    if not 0 < size <= d.n:
        raise DataError(f"subsample size {size} outside 1..{d.n}")
    rng = np.random.default_rng(seed)
    counts = d.class_counts()
    quota = np.floor(counts * size / d.n).astype(int)
    rest = size - quota.sum()
    order = np.argsort(-(counts * size / d.n - quota), kind="stable")
    quota[order[:rest]] += 1
    idx = []
    for cls in range(1, d.K + 1):
        members = np.nonzero(d.y == cls)[0]
        idx.extend(rng.choice(members, size=quota[cls - 1], replace=False).tolist())
    return d.subset(np.sort(idx))


def holdout_split(d: Dataset, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/validation index split holding out ``fraction``."""
    rng = np.random.default_rng(seed)
    val = []
    for cls in range(1, d.K + 1):
        members = np.nonzero(d.y == cls)[0]
        members = members[rng.permutation(members.size)]
        take = int(round(fraction * members.size))
        if members.size > 1:
            take = min(max(take, 1), members.size - 1)
        else:
            take = 0
        val.extend(members[:take].tolist())
    val = np.sort(np.array(val, dtype=int))
    train = np.setdiff1d(np.arange(d.n), val)
    return train, val
