from pathlib import Path

import pytest
from hypothesis import settings

from homog.model import CoefficientField, LatticeSpec, OperatorSymbol, Problem

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"


@pytest.fixture
def configs_dir():
    return CONFIGS


@pytest.fixture
def lattice2():
    return LatticeSpec.cubic(2)


def scalar_problem(family, d=2, lambda_bounded=True, **params):
    return Problem(LatticeSpec.cubic(d), OperatorSymbol.grad(d), CoefficientField(family, d, d, params),
                   lambda_bounded=lambda_bounded)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_acceptance(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
