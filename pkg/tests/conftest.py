import numpy as np
import pytest
from hypothesis import settings

from pecs.timetag import AcquisitionRecord

settings.register_profile("pecs", max_examples=40, deadline=None)
settings.load_profile("pecs")


def poisson_ticks(rng, rate, duration, tick):
    n = rng.poisson(rate * duration)
    return np.sort(rng.integers(0, int(duration / tick), n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_record(rng):
    tick = 1e-9
    a = poisson_ticks(rng, 2e4, 0.05, tick)
    b = poisson_ticks(rng, 2e4, 0.05, tick)
    return AcquisitionRecord.from_ticks(a, b, tick, 0.05)


def synthetic_result(edges, g2, sigma=None, rate=1e5, T=10.0):
    """CorrelationResult carrying a prescribed curve on ``edges``."""
    from pecs.correlator import CorrelationResult

    edges = np.asarray(edges, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    sigma = np.full_like(g2, 0.01) if sigma is None else np.broadcast_to(np.asarray(sigma, float), g2.shape)
    return CorrelationResult(edges, 0.5 * (edges[1:] + edges[:-1]), np.zeros(g2.size, dtype=np.int64), g2,
                             np.array(sigma), np.array(sigma), rate, rate, T)


ACCEPTANCE: dict = {}


def record_criterion(number, passed, detail):
    """Store and print one acceptance line; the terminal summary repeats them in order."""
    line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
