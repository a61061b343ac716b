import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from katolab.grid import Grid
from katolab.recipes import random_band_limited

settings.register_profile(
    "katolab", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("katolab")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid1():
    return Grid(1, 32, 1.0)


@pytest.fixture
def grid2():
    return Grid(2, 8, 1.0)


def band_limited(grid, seed=0, max_mode=3, mean_zero=False):
    return random_band_limited(grid, np.random.default_rng(seed), max_mode, mean_zero)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
