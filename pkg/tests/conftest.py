import numpy as np
import pytest

# (criterion, passed, detail) lines collected by the acceptance tests
ACCEPTANCE_REPORT = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_REPORT:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
