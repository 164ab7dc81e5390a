import numpy as np
import pytest

from crossmax.field_model import Grid


@pytest.fixture
def grid16():
    return Grid(1, 16)


@pytest.fixture
def grid32():
    return Grid(1, 32)


@pytest.fixture
def grid64():
    return Grid(1, 64)


@pytest.fixture
def grid2d():
    return Grid(2, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
