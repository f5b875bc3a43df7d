"""Shared fixtures: session-scoped spectra and compiled-kernel warm-up."""
import pytest

from speclab.pathkern import warm_kernels
from speclab.spectral import rectangle_spectrum

# One line per acceptance check, echoed after the run so the verdicts stay
# visible even when pytest captures per-test output.
ACCEPTANCE_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def unit50():
    return rectangle_spectrum(1.0, 1.0, 50.0)


@pytest.fixture(scope="session")
def unit66():
    return rectangle_spectrum(1.0, 1.0, 66.5)


@pytest.fixture(scope="session")
def unit100():
    return rectangle_spectrum(1.0, 1.0, 100.0)


@pytest.fixture(scope="session")
def unit200():
    return rectangle_spectrum(1.0, 1.0, 200.0)


@pytest.fixture(scope="session")
def unit400():
    return rectangle_spectrum(1.0, 1.0, 400.0)


@pytest.fixture(scope="session")
def warm():
    """Compile the path kernels once so no test times jit compilation."""
    warm_kernels()
