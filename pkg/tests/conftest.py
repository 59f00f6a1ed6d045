import numpy as np
import pytest

from corehts.harness.bound import example_hierarchy
from corehts.hierarchy import build_aggregation

CRITERIA: list[str] = []


@pytest.fixture
def record_criterion():
    """Print and remember one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture
def tree8():
    spec = example_hierarchy()
    return spec, build_aggregation(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
