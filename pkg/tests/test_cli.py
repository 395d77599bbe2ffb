import json
import subprocess
import sys

import pytest

from moctsvm.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from moctsvm.experiment import separable_toy

from test_experiment import write_csv


@pytest.fixture
def sep(tmp_path):
    return write_csv(separable_toy(seed=1, n=16), tmp_path / "sep.csv")


def test_train_predict_roundtrip(sep, tmp_path, capsys):
    model = tmp_path / "m.json"
    assert main(["train", "--data", sep, "--depth", "1", "--time-limit", "10", "--c3", "0.01", "--out", str(model)]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["training_accuracy"] == 1.0
    assert info["status"] in ("optimal", "feasible_time_limit")
    preds = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--data", sep, "--out", str(preds)]) == EXIT_OK
    lines = preds.read_text().splitlines()
    truth = [r.split(",")[-1] for r in open(sep).read().splitlines()[1:]]
    assert [r.split(",")[1] for r in lines[1:]] == truth


def test_cart_train(sep, tmp_path, capsys):
    assert main(["train", "--method", "cart", "--data", sep, "--depth", "2", "--out", str(tmp_path / "c.json")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["method"] == "cart"


def test_export_model(sep, tmp_path):
    out = tmp_path / "m.txt"
    assert main(["export-model", "--data", sep, "--depth", "1", "--out", str(out)]) == EXIT_OK
    text = out.read_text()
    assert text.startswith("MIQP ") and text.rstrip().endswith("END")


def test_crossval_writes_reports(sep, tmp_path, capsys):
    out = tmp_path / "r"
    argv = ["crossval", "--data", sep, "--depth", "1", "--folds", "2", "--repeats", "1", "--c1-grid", "1", "--c2-grid", "1",
            "--c3-grid", "0.01", "--time-limit", "10", "--out", str(out)]
    assert main(argv) == EXIT_OK
    assert "100.00" in capsys.readouterr().out
    assert json.loads((out / "report.json").read_text())["rows"][0]["mean_accuracy"] == 1.0


@pytest.mark.parametrize(
    "argv",
    [
        ["frobnicate"],
        ["oracle-check", "--trials", "0"],
        ["train", "--depth", "2"],
        ["crossval", "--data", "x.csv", "--c1-grid", "a,b"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_data_errors(tmp_path):
    assert main(["train", "--data", str(tmp_path / "missing.csv")]) == EXIT_DATA
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert main(["predict", "--model", str(bad), "--data", str(bad)]) == EXIT_DATA


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "moctsvm", "oracle-check", "--trials", "1", "--seed", "2"], capture_output=True, text=True)
    assert r.returncode == 0
    assert r.stdout.strip().splitlines()[-1].startswith("PASS")
