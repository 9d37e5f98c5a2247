from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from mppi_dbas.config import load_default
from mppi_dbas.controller import ControllerConfig
from mppi_dbas.dynamics import VehicleParams, VehicleState
from mppi_dbas.safety import CircularObstacle, ConstraintSet
from mppi_dbas.scenario import Scenario, build_line_semicircle_path

settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def default_experiment():
    return load_default()


@pytest.fixture(scope="session")
def free_scenario():
    """Obstacle-free course starting on the path at the reference speed."""
    path = build_line_semicircle_path(30.0, 20.0, 5.0, 1.0)
    return Scenario(path, initial_state=VehicleState(0.0, 0.0, 0.0, 5.0))


@pytest.fixture(scope="session")
def gate_scenario():
    path = build_line_semicircle_path(30.0, 20.0, 5.0, 1.0)
    obstacles = ConstraintSet((CircularObstacle((12.0, -1.0), 2.0), CircularObstacle((12.0, 7.0), 2.0)))
    return Scenario(path, obstacles, initial_state=VehicleState(0.0, 0.0, 0.0, 5.0))


@pytest.fixture
def small_config():
    return ControllerConfig(num_samples=64, horizon=12, sg_window=5, sg_order=2, lam=10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record a one-line PASS/FAIL verdict for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
