import math

import numpy as np
import pytest

from gsgdlab.numerics import RngStream
from gsgdlab.problems import noisy_least_squares


@pytest.fixture
def rng():
    return RngStream(20240607, 1)


@pytest.fixture
def default_problem():
    return noisy_least_squares()


@pytest.fixture
def default_w0(default_problem):
    return default_problem.w_star - 5.0 * np.ones(10) / math.sqrt(10)


VERDICTS_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion and assert it."""
    store = request.config.stash.setdefault(VERDICTS_KEY, [])

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}: {detail}"
        store.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
