import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from yamabe_lab.grid import MetricField, PeriodicGrid

settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


def smooth_metric(grid: PeriodicGrid, rng: np.random.Generator, amp: float = 0.15) -> MetricField:
    """Identity plus a small band-limited symmetric perturbation."""
    pert = grid.band_limited_tensor(rng, amp, max_mode=1)
    vals = np.eye(grid.dim) + pert
    return MetricField(grid, vals)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid3():
    return PeriodicGrid.cube(3, 16)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][2:])):
            terminalreporter.write_line(line)
