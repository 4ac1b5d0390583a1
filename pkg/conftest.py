import os

import pytest

from fiberlim.fib_geometry import StructuredGrid
from fiberlim.fib_limit import BodyForce
from fiberlim.fib_material import LameCoefficients, effective_coefficients

ROOT = os.path.dirname(os.path.abspath(__file__))


@pytest.fixture
def scenarios_dir():
    return os.path.join(ROOT, "scenarios")


@pytest.fixture
def base():
    return LameCoefficients(lam=1.0, mu=1.0)


@pytest.fixture
def critical_eff(base):
    return effective_coefficients(base, 2.0, 1.0, 1.0)


@pytest.fixture
def small_grid():
    return StructuredGrid.from_elements(1.0, 1.0, 1.0, 4, 4, 4)


@pytest.fixture
def axial_force():
    return BodyForce.from_expressions(["0", "0", "1"])
