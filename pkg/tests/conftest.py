import numpy as np
import pytest

from bdbf import GaussianPrior, RegressionSystem


def random_system(rng, n, m, *, scale=1.0):
    phi = rng.standard_normal((n, m)) * scale
    z = rng.standard_normal(n)
    return RegressionSystem(phi, z)


def random_prior(rng, m):
    a = rng.standard_normal((m, m))
    cov = a @ a.T + m * np.eye(m) * 0.5
    return GaussianPrior(rng.standard_normal(m), cov)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if not test_acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(test_acceptance.RESULTS):
        terminalreporter.write_line(test_acceptance.verdict_line(number))
