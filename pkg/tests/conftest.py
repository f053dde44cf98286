import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("moveset", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("moveset")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


VERDICTS = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line; the test still asserts separately."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
