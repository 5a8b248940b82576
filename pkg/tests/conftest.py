import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nightcolor.features import BANDS, PREDICTORS, Dataset

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_dataset(n, seed=0, name="rand", bands=True):
    """Plausible predictors (hbase ranges respected) with linear bands plus noise."""
    rng = np.random.default_rng(seed)
    alan = rng.gamma(4.0, 5.0, n)
    X = np.column_stack([
        alan,
        rng.normal(0, 3, n),
        np.abs(rng.normal(4, 3, n)),
        rng.uniform(0, 100, n),
        rng.uniform(0, 40, n),
    ])
    cells = np.column_stack([np.arange(n) // 1000, np.arange(n) % 1000])
    Y = None
    if bands:
        B = rng.normal(0, 0.5, (len(PREDICTORS), len(BANDS)))
        Y = 20 + X @ B + rng.normal(0, 2, (n, len(BANDS)))
    return Dataset(name, cells, X, Y)


@pytest.fixture
def small_ds():
    return random_dataset(300, seed=1)


# acceptance outcomes, filled by test_acceptance and echoed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
