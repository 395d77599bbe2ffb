import csv
import json

import numpy as np
import pytest

from moctsvm.dataset import load_csv, stratified_folds
from moctsvm.experiment import (
    FULL_C3_GRID,
    FULL_C12_GRID,
    ExperimentConfig,
    SolverFailure,
    _selection_key,
    oracle_check,
    run_crossval,
    separable_toy,
    training_hash,
)


def write_csv(d, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(d.feature_names) + ["label"])
        for row, k in zip(d.raw_X(), d.y):
            w.writerow([repr(float(v)) for v in row] + [d.class_names[k - 1]])
    return str(path)


@pytest.fixture
def separable_csv(tmp_path):
    return write_csv(separable_toy(seed=2, n=20), tmp_path / "sep.csv")


def _tiny(path, **kw):
    base = dict(data=(path,), depth=1, c1_grid=(1.0,), c2_grid=(1.0, 100.0), c3_grid=(0.01,), folds=2, repeats=1, time_limit=10)
    base.update(kw)
    return ExperimentConfig(**base)


def test_default_grids():
    assert FULL_C12_GRID[0] == pytest.approx(1e-5) and FULL_C12_GRID[-1] == pytest.approx(1e5) and len(FULL_C12_GRID) == 11
    assert FULL_C3_GRID == pytest.approx((0.01, 0.1, 1, 10, 100))
    cfg = ExperimentConfig(data=("x.csv",))
    assert (cfg.folds, cfg.repeats, cfg.time_limit) == (5, 5, 300.0)
    assert len(cfg.grid()) == 11 * 11 * 5


@pytest.mark.parametrize("kw", [dict(c1_grid=()), dict(time_limit=0), dict(folds=1), dict(method="svm"), dict(c3_grid=(-1.0,))])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ExperimentConfig(data=("x.csv",), **kw)


def test_selection_prefers_simpler_models():
    a = {"c1": 1, "c2": 1, "c3": 10}
    b = {"c1": 100, "c2": 1, "c3": 1}
    c = {"c1": 1, "c2": 1, "c3": 1}
    best = min([a, b, c], key=lambda p: _selection_key(p, 0.9))
    assert best == c
    assert _selection_key(a, 0.95) < _selection_key(c, 0.9)


def test_separable_toy_is_perfect(separable_csv):
    rep = run_crossval(_tiny(separable_csv))
    row = rep.rows[0]
    assert row.mean_accuracy == 1.0
    assert all(f.status == "optimal" for f in row.folds)


def test_report_is_self_consistent_and_uses_training_rows_only(separable_csv):
    cfg = _tiny(separable_csv, method="cart", folds=4, repeats=2, seed=5)
    rep = run_crossval(cfg)
    doc = json.loads(rep.to_json())
    row = doc["rows"][0]
    accs = [f["accuracy"] for f in row["folds"]]
    assert len(accs) == 8
    assert row["mean_accuracy"] == pytest.approx(np.mean(accs))
    assert row["sd_accuracy"] == pytest.approx(np.std(accs, ddof=1))
    d = load_csv(separable_csv)
    plan = stratified_folds(d, 4, 2, 5)
    for f, (r, k, tr, te) in zip(row["folds"], plan.splits()):
        assert (f["repeat"], f["fold"]) == (r, k)
        assert f["train_hash"] == training_hash(d.subset(tr))
        assert f["train_hash"] != training_hash(d.subset(np.union1d(tr, te[:1])))


def test_reruns_write_identical_reports(separable_csv, tmp_path):
    for out in ("a", "b"):
        run_crossval(_tiny(separable_csv, seed=3)).write(tmp_path / out)
    for name in ("report.json", "report.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "wall_time" in (tmp_path / "a" / "timing.json").read_text()
    assert "wall_time" not in (tmp_path / "a" / "report.json").read_text()


def test_missing_dataset(tmp_path):
    with pytest.raises(Exception):
        run_crossval(_tiny(str(tmp_path / "nope.csv")))


def test_oracle_check_is_reproducible():
    a = oracle_check(seed=4, trials=2, max_n=5)
    b = oracle_check(seed=4, trials=2, max_n=5)
    assert a.passed and a.lines == b.lines
    with pytest.raises(ValueError):
        oracle_check(seed=0, trials=0)
