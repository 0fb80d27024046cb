import numpy as np
import pytest

from irpe.statespace import ModelFamily, SensorModel


def scalar_family(D, H=1.0, Q=0.0, R=0.0, lower=-np.inf, upper=np.inf):
    """One-sensor scalar family with constant matrices."""
    s = SensorModel([[D]], [[H]], [[Q]], [[R]])
    return ModelFamily((s,), [lower], [upper])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record (and print) one pass/fail line for an acceptance criterion."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
