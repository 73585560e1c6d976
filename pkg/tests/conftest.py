import math
from functools import lru_cache

import pytest

from kdvstab.basis import lift_modes
from kdvstab.spectrum import scan_eigenvalues

CRITICAL_L = 2 * math.pi

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


@lru_cache(maxsize=None)
def scalar_modes(L: float, count: int):
    return tuple(scan_eigenvalues(L, count))


@lru_cache(maxsize=None)
def system_modes(L: float, count: int):
    """``count`` system modes (conjugate pairs)."""
    return tuple(lift_modes(scalar_modes(L, count // 2)))


@pytest.fixture(scope="session")
def modes_L1():
    return system_modes(1.0, 16)


@pytest.fixture(scope="session")
def scalar_L1():
    return scalar_modes(1.0, 32)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
