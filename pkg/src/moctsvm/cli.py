"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import classifier as clf_io
from .bnb import BnbConfig
from .baseline_cart import CartConfig, fit_cart
from .classifier import ModelFormatError, accuracy
from .dataset import DataError, load_csv, normalize
from .experiment import (
    FULL_C3_GRID,
    FULL_C12_GRID,
    SMALL_GRID,
    BenchReport,
    ExperimentConfig,
    SolverFailure,
    fit_moctsvm,
    oracle_check,
    run_crossval,
)
from .formulation import CostConfig, ModelOptions, build_model, format_model
from .topology import build_topology

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("moctsvm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _label_col(text):
    if text is None:
        return None
    return int(text) if text.lstrip("-").isdigit() else text


def _grid(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty grid")
    return vals


def _common(p: argparse.ArgumentParser, data_required: bool = True):
    p.add_argument("--data", required=data_required, action="append", help="CSV file with a header row (repeatable for bench)")
    p.add_argument("--label-col", default=None, help="label column name or 0-based index (default: last)")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--c1", type=float, default=1.0)
    p.add_argument("--c2", type=float, default=1.0)
    p.add_argument("--c3", type=float, default=1.0)
    p.add_argument("--time-limit", type=float, default=300.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker cap (fits currently run serially)")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="moctsvm", description="Optimal classification trees with SVM splits")
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a tree and save it as JSON")
    _common(t)
    t.add_argument("--method", choices=("moctsvm", "cart"), default="moctsvm")
    t.add_argument("--node-limit", type=int, default=1_000_000)
    t.add_argument("--min-leaf", type=float, default=0.05, help="CART minimum leaf fraction")

    pr = sub.add_parser("predict", help="predict classes for a CSV with a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--label-col", default=None, help="column to drop before predicting, if present")
    pr.add_argument("--out", default=None, help="prediction CSV (default: stdout)")
    pr.add_argument("-v", "--verbose", action="store_true")

    for name, help_text in (("crossval", "repeated k-fold evaluation of one method"), ("bench", "crossval for both methods with a combined table")):
        c = sub.add_parser(name, help=help_text)
        _common(c)
        if name == "crossval":
            c.add_argument("--method", choices=("moctsvm", "cart"), default="moctsvm")
        c.add_argument("--folds", type=int, default=5)
        c.add_argument("--repeats", type=int, default=5)
        c.add_argument("--grid-scale", choices=("full", "small"), default="full")
        c.add_argument("--c1-grid", type=_grid, default=None)
        c.add_argument("--c2-grid", type=_grid, default=None)
        c.add_argument("--c3-grid", type=_grid, default=None)
        c.add_argument("--subsample", type=int, default=None)
        c.add_argument("--tuning-time-limit", type=float, default=None)
        c.add_argument("--tuning-node-limit", type=int, default=None)
        c.add_argument("--node-limit", type=int, default=1_000_000)

    o = sub.add_parser("oracle-check", help="compare the solver against depth-1 enumeration")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--trials", type=int, default=20)
    o.add_argument("--out", default=None)
    o.add_argument("-v", "--verbose", action="store_true")

    e = sub.add_parser("export-model", help="write the mixed-integer model in the text exchange format")
    _common(e)
    e.add_argument("--vi", default="VI2,VI3,VI4", help="comma-separated valid-inequality families")
    return root


def _bnb(args) -> BnbConfig:
    return BnbConfig(time_limit=args.time_limit, deterministic=args.deterministic, node_limit=args.node_limit)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_train(args) -> int:
    d = normalize(load_csv(args.data[0], _label_col(args.label_col)))
    if args.method == "cart":
        model = fit_cart(d, CartConfig(args.depth, args.min_leaf))
        info = {"method": "cart", "active_nodes": model.active_nodes}
    else:
        model, r = fit_moctsvm(d, args.depth, CostConfig(args.c1, args.c2, args.c3), _bnb(args))
        info = {"method": "moctsvm", "status": r.status, "objective": r.objective, "gap": r.gap, "nodes": r.nodes_explored}
    info["training_accuracy"] = accuracy(model, d)
    out = args.out or "model.json"
    clf_io.save(model, out)
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def _feature_columns(header: list[str], model, label_col) -> list[int]:
    if all(f in header for f in model.feature_names):
        return [header.index(f) for f in model.feature_names]
    if len(header) == model.p:
        return list(range(model.p))
    if len(header) == model.p + 1:
        drop = label_col if label_col is not None else len(header) - 1
        if isinstance(drop, str):
            if drop not in header:
                raise DataError(f"label column {drop!r} not found")
            drop = header.index(drop)
        return [i for i in range(len(header)) if i != drop % len(header)]
    raise DataError(f"expected {model.p} feature columns, found {len(header)} columns")


def cmd_predict(args) -> int:
    model = clf_io.load(args.model)
    with open(args.data, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{args.data}: empty file")
    cols = _feature_columns(rows[0], model, _label_col(args.label_col))
    X = []
    for r, row in enumerate(rows[1:], start=2):
        try:
            X.append([float(row[i]) for i in cols])
        except (ValueError, IndexError) as exc:
            raise DataError(f"{args.data}: line {r}: {exc}") from exc
    if args.out:
        clf_io.write_predictions(model, X, args.out)
    else:
        sys.stdout.write("row,predicted\n")
        for i, name in enumerate(model.predict_names(X)):
            sys.stdout.write(f"{i},{name}\n")
    return EXIT_OK


def _experiment(args, method: str) -> ExperimentConfig:
    small = args.grid_scale == "small"
    return ExperimentConfig(
        data=tuple(args.data),
        method=method,
        depth=args.depth,
        c1_grid=args.c1_grid or (SMALL_GRID if small else FULL_C12_GRID),
        c2_grid=args.c2_grid or (SMALL_GRID if small else FULL_C12_GRID),
        c3_grid=args.c3_grid or (SMALL_GRID if small else FULL_C3_GRID),
        folds=args.folds,
        repeats=args.repeats,
        time_limit=args.time_limit,
        seed=args.seed,
        out_dir=args.out,
        label_column=_label_col(args.label_col),
        subsample=args.subsample,
        tuning_time_limit=args.tuning_time_limit,
        tuning_node_limit=args.tuning_node_limit,
        node_limit=args.node_limit,
        deterministic=args.deterministic,
    )


def cmd_crossval(args, methods=None) -> int:
    methods = methods or [args.method]
    combined = BenchReport()
    for method in methods:
        cfg = _experiment(args, method)
        rep = run_crossval(cfg, progress=log.info)
        combined.rows.extend(rep.rows)
        combined.settings[method] = rep.settings
    if args.out:
        combined.write(args.out)
    sys.stdout.write(combined.to_text(include_timing=True))
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    summary = oracle_check(args.seed, args.trials)
    text = summary.to_text()
    if args.out:
        Path(args.out).write_text(text)
        text = text.splitlines()[-1] + "\n"
    sys.stdout.write(text)
    return EXIT_OK if summary.passed else EXIT_SOLVER


def cmd_export(args) -> int:
    d = normalize(load_csv(args.data[0], _label_col(args.label_col)))
    vis = frozenset(v for v in args.vi.split(",") if v)
    m = build_model(d, build_topology(args.depth), CostConfig(args.c1, args.c2, args.c3), ModelOptions(valid_inequalities=vis))
    _emit(format_model(m), args.out)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    handlers = {
        "train": cmd_train,
        "predict": cmd_predict,
        "crossval": cmd_crossval,
        "bench": lambda a: cmd_crossval(a, ["cart", "moctsvm"]),
        "oracle-check": cmd_oracle,
        "export-model": cmd_export,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataError, ModelFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverFailure, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
