from __future__ import annotations

import numpy as np
import pytest

from irpatch.harness.fixture import default_detector, default_scene
from irpatch.optim import OptimConfig, run
from irpatch.victim import generate_scene


def central_diff(f, x, h=1e-6, where=None):
    """Central-difference gradient of scalar ``f`` at every (or every ``where``) entry."""
    x = np.array(x, dtype=np.float64, copy=True)
    g = np.zeros_like(x)
    idx = np.argwhere(np.ones(x.shape, bool) if where is None else where)
    for i in map(tuple, idx):
        v = x[i]
        x[i] = v + h
        up = f(x)
        x[i] = v - h
        down = f(x)
        x[i] = v
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-12))


@pytest.fixture(scope="session")
def detector():
    return default_detector()


@pytest.fixture(scope="session")
def fixture_scene():
    image, obj = generate_scene(default_scene(0))
    return np.asarray(image), obj


@pytest.fixture(scope="session")
def fixture_run(detector, fixture_scene):
    x, obj = fixture_scene
    return run(detector, x, 0.2, obj, OptimConfig(), snapshot_every=10)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
