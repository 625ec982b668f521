import numpy as np
import pytest

from coalflow import kernels
from coalflow.models import continuous_shift, lattice_shuffle

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_log(request):
    """Append one summary line per criterion; printed at the end of the run."""
    lines = request.config.stash[_LINES]

    def log(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
    return log


@pytest.fixture(scope="session")
def lattice():
    return lattice_shuffle()


@pytest.fixture(scope="session")
def continuous():
    return continuous_shift()


@pytest.fixture(scope="session")
def backends():
    names = kernels.available_backends()
    return [kernels.get_backend(n) for n in names]


@pytest.fixture
def gen():
    return np.random.default_rng(12345)
