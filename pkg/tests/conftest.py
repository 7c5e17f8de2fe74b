import mpmath as mp
import numpy as np
import pytest

from transparent_reward.core import Dataset, Trajectory


def brute_log_kde(points, bandwidth, query, floor=1e-300, dps=40):
    """log of (1/N) sum_i prod_j N(q_j; x_ij, h_j), clamped, in extended precision."""
    with mp.workdps(dps):
        total = mp.mpf(0)
        for x in points:
            term = mp.mpf(1)
            for q, xi, h in zip(query, x, bandwidth):
                u = (mp.mpf(float(q)) - mp.mpf(float(xi))) / mp.mpf(float(h))
                term *= mp.exp(-u * u / 2) / (mp.sqrt(2 * mp.pi) * mp.mpf(float(h)))
            total += term
        dens = total / len(points)
        return float(max(mp.log(dens), mp.log(mp.mpf(floor)))) if dens > 0 else float(mp.log(mp.mpf(floor)))


def random_dataset(rng, k=6, n=8, d=2, scale=1.0):
    trajs = [Trajectory(np.cumsum(rng.normal(scale=scale, size=(n, d)), axis=0)) for _ in range(k)]
    return Dataset.from_trajectories(trajs, name="random-walks")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> PASS/FAIL line, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
