import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kfa.embedding import SampleTable

settings.register_profile(
    "kfa",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
    derandomize=True,
)
settings.load_profile("kfa")


def random_table(rng, n=60, d=3, shift=1.0):
    """Random table with every (y, g) cell occupied and unequal base rates."""
    while True:
        g = np.where(rng.random(n) < 0.5, "a", "b")
        y = (rng.random(n) < np.where(g == "a", 0.6, 0.3)).astype(np.int8)
        cells_ok = all(np.any((y == yy) & (g == gg)) for yy in (0, 1) for gg in ("a", "b"))
        if cells_ok and y[g == "a"].mean() != y[g == "b"].mean():
            break
    X = rng.standard_normal((n, d)) + shift * np.outer(y + (g == "a"), np.ones(d))
    return SampleTable(X, y, g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def table(rng):
    return random_table(rng)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        terminalreporter.write_line(results[num])
