import numpy as np
import pytest

from srlab.srgeom import preset


@pytest.fixture
def heis():
    return preset("heisenberg")


@pytest.fixture
def mart():
    return preset("martinet")


@pytest.fixture
def eng():
    return preset("engel")


@pytest.fixture
def flat2():
    return preset("flat-rn", n=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def loglog_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion."""
    log = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        log[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE, {})
    if log:
        terminalreporter.section("acceptance criteria")
        for k in sorted(log):
            terminalreporter.write_line(log[k])
