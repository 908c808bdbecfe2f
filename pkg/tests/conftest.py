import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_atom():
    from tdoct.propagation import GridAtom
    from tdoct.state import Grid
    return GridAtom(Grid(-20.0, 20.0, 64), mask_width=None)


@pytest.fixture(scope="session")
def atom512():
    from tdoct.propagation import GridAtom
    from tdoct.state import Grid
    return GridAtom(Grid(-100.0, 100.0, 512))


@pytest.fixture(scope="session")
def tls():
    from tdoct.propagation import TwoLevelSystem
    return TwoLevelSystem()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """``record(number, ok, detail)`` prints and collects one line per criterion."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
