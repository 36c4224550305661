import math

import numpy as np
import pytest

from helmscat.forward import BoundaryCondition, clear_cache
from helmscat.geometry import shape_perturb, shape_sphere

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def unit_sphere():
    return shape_sphere(1.0)


@pytest.fixture
def bumpy():
    """Non-symmetric test body ``r = 1 + 0.15 Y_{3,1}``."""
    return shape_perturb(shape_sphere(1.0), 3, 1, 0.15)


@pytest.fixture
def dirichlet():
    return BoundaryCondition.dirichlet()


@pytest.fixture
def neumann():
    return BoundaryCondition.neumann()


@pytest.fixture
def lossy():
    return BoundaryCondition.impedance(0.5 + 0.3j)


@pytest.fixture(autouse=True, scope="module")
def _fresh_cache():
    clear_cache()
    yield
    clear_cache()


def rel_max(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


SQRT_4PI = math.sqrt(4.0 * math.pi)
