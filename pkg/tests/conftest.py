import numpy as np
import pytest

from mcidscore.dataset import Dataset, WeightMode, empirical_weights
from mcidscore.kernels import make_gaussian_order
from mcidscore.risk import RiskContext

#: Filled by test_acceptance; one entry per criterion, printed after the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def random_dataset(rng, n, d, scale=1.0):
    """Small noisy threshold data with both labels present."""
    z = rng.standard_normal((n, d))
    x = rng.standard_normal(n) * scale
    beta = rng.standard_normal(d) * 0.5
    y = np.where(x - z @ beta + 0.3 * rng.standard_normal(n) >= 0, 1.0, -1.0)
    y[0], y[1] = 1.0, -1.0
    return Dataset(x, y, z)


def context(data, delta=0.5, order=2, mode=WeightMode.INVERSE_PROPORTION):
    return RiskContext.from_dataset(data, empirical_weights(data, mode), make_gaussian_order(order), delta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
