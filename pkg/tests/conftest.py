import math

import numpy as np
import pytest
from hypothesis import settings

from mhdlab.spectral import Grid3, make_rng

settings.register_profile("numerics", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("numerics")


@pytest.fixture(scope="session")
def grid16():
    return Grid3(16, 16, 16)


@pytest.fixture(scope="session")
def grid32():
    return Grid3(32, 32, 32, Lz=8 * math.pi)


@pytest.fixture
def rng():
    return make_rng(1234)


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record ``(criterion, ok, detail)`` for the terminal summary, then assert ``ok``."""
    lines = request.config.stash[_VERDICTS]

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
