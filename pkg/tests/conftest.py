import numpy as np
import pytest

from delaymimo.model import ChainParams, StreamProfile
from delaymimo.phy import EigenSampleCache, PhyConfig
from delaymimo.waterfill import CacheTables


@pytest.fixture(scope="session")
def phy():
    return PhyConfig()


@pytest.fixture(scope="session")
def cache(phy):
    return EigenSampleCache.build(phy, 100_000, seed=1)


@pytest.fixture(scope="session")
def tables(cache):
    return CacheTables(cache)


@pytest.fixture(scope="session")
def small_tables(phy):
    return CacheTables(EigenSampleCache.build(phy, 2_000, seed=3))


@pytest.fixture(scope="session")
def two_stream(phy):
    """Reference two-stream chain: weights 1 and 10, 200-bit packets, N = 4."""
    return ChainParams([StreamProfile(1.0, 0.02, 200.0), StreamProfile(10.0, 0.02, 200.0)],
                       buffer_size=4, gamma=1e-2, alpha=phy.alpha)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def verdict(request):
    """Record one acceptance verdict; parts of one criterion merge into one line."""
    log = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(criterion: int, passed: bool, detail: str):
        prev = log.get(criterion)
        if prev is not None:
            passed = passed and prev[0]
            detail = prev[1] + "; " + detail
        log[criterion] = (bool(passed), detail)
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE, None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(log):
        ok, detail = log[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
