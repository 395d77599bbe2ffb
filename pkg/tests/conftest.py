import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from moctsvm.dataset import from_labels, normalize

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def two_point():
    """1-D points x=0 and x=1 with different labels."""
    return normalize(from_labels(np.array([[0.0], [1.0]]), ["a", "b"]))


@pytest.fixture
def iris_path():
    from pathlib import Path

    return str(Path(__file__).resolve().parents[1] / "data" / "iris.csv")


def pytest_terminal_summary(terminalreporter):
    # acceptance lines are collected during the run; printing them here keeps
    # them out of pytest's output capture
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ANNOUNCED", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
