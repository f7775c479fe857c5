import numpy as np
import pytest

from fctl import _backend


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(params=_backend.available())
def backend(request):
    return request.param


# Acceptance criteria register one line each; they are printed after the run
# whether or not output capture is on.
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(number, ok, detail):
        ACCEPTANCE_LINES.append((number, f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"))
        print(ACCEPTANCE_LINES[-1][1])

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
