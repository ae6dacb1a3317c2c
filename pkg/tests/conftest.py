import numpy as np
import pytest
from hypothesis import settings

from tergmix.netseries import NetworkSeries

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_series(rng, n, T, density=0.4):
    adj = np.zeros((T + 1, n, n), dtype=bool)
    iu = np.triu_indices(n, k=1)
    for t in range(T + 1):
        up = rng.random(len(iu[0])) < density
        adj[t][iu] = up
        adj[t] |= adj[t].T
    return NetworkSeries(adj)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_series(rng):
    return random_series(rng, 7, 4)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
