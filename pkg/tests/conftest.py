import numpy as np
import pytest

from slmc import gaussian_model

# lines collected by the acceptance gate, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def two_point_gaussian():
    """n=2, d=1, X = {0, 2}, unit likelihood and prior scales."""
    return gaussian_model(np.array([[0.0], [2.0]]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
