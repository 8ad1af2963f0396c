import numpy as np
import pytest

from spacetsiv.simulate import dgp1_spec, dgp3_spec, simulate_individual
from spacetsiv.sumstats import joint_from_individual

ACCEPTANCE_LINES = []


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.max(np.abs(b))
    return float(np.max(np.abs(a - b)) / (scale if scale > 0 else 1.0))


def random_joint(rng, m, d, n=1000, noise=0.1):
    """A noisy but well-conditioned joint summary-statistic instance."""
    from spacetsiv.sumstats import JointSummaryStats

    big_pi = rng.normal(size=(m, d))
    beta = rng.normal(size=d)
    pi = big_pi @ beta + noise * rng.normal(size=m)
    a = rng.normal(size=(m, m))
    sigma_pi = a @ a.T + m * np.eye(m)
    g = rng.normal(size=(m * d, m * d))
    sigma_big = g @ g.T / (m * d) + np.eye(m * d)
    return JointSummaryStats(pi=pi, sigma_pi=sigma_pi, big_pi=big_pi, sigma_big_pi=sigma_big, n_a=n, n_b=n)


@pytest.fixture
def dgp1():
    return dgp1_spec()


@pytest.fixture
def dgp3():
    return dgp3_spec()


@pytest.fixture
def dgp1_joint():
    spec = dgp1_spec()
    return joint_from_individual(*simulate_individual(spec, 5000, 5000, rng=np.random.default_rng(7)))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
