import numpy as np
import pytest

from smp_lab.brownian import sample_brownian
from smp_lab.delay import DelaySpec, make_time_grid, realize_delay

# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def grid():
    return make_time_grid(1.0, 50)


@pytest.fixture
def bundle(grid):
    return sample_brownian(grid, 4000, 123)


@pytest.fixture
def half_delay(grid):
    return realize_delay(DelaySpec.proportional(0.5), grid)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:2d}. {title}: {detail}")
