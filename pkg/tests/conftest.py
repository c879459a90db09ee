import numpy as np
import pytest

from homogenize.cell import solve_cell_problem
from homogenize.lattice import CellGrid, SymbolOperator, layered_coefficient

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def record():
    def _record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed
    return _record


@pytest.fixture(scope="session")
def grad2():
    return SymbolOperator.gradient(2)


@pytest.fixture(scope="session")
def layered():
    return layered_coefficient(2)


@pytest.fixture(scope="session")
def layered_cell(layered, grad2):
    return solve_cell_problem(layered, grad2, CellGrid(256))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}")
