import numpy as np
import pytest

from agro.lin_solve import Instance


@pytest.fixture
def toy():
    """One facility, one destination: c=1, p=10, d1=1, d2=5."""
    return Instance(c=[1.0], d1=[[1.0]], d2=5.0, p=[10.0])


def random_instance(rng, I, J, integer=False):
    if integer:
        d1 = rng.integers(1, 7, size=(I, J)).astype(float)
    else:
        d1 = rng.uniform(0.5, 6.0, size=(I, J))
    return Instance(c=rng.uniform(0.1, 4.0, I), d1=d1, d2=5.0, p=rng.uniform(2.0, 18.0, I))


ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
