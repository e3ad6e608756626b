import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report_line():
    """Record a one-line verdict that is echoed in the terminal summary."""
    def emit(line: str):
        ACCEPTANCE_LINES.append(line)
        print(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
