import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dlqg.controller import SteadyGains, synthesize  # noqa: E402
from dlqg.model import benchmark_problem  # noqa: E402
from dlqg.riccati import forward_iteration, solve_finite_horizon  # noqa: E402


@pytest.fixture(scope="session")
def bench():
    return benchmark_problem()


@pytest.fixture(scope="session")
def bench_steady(bench):
    ss, trace = forward_iteration(bench, 3.0, 3.0, 0.1, tol=1e-12)
    return ss, trace


@pytest.fixture(scope="session")
def bench_steady_gains(bench_steady):
    ss, _ = bench_steady
    return SteadyGains(ss.K, ss.Gamma)


@pytest.fixture(scope="session")
def bench_n20(bench):
    fh = solve_finite_horizon(bench, 20)
    return fh, synthesize(fh.riccati)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.REPORT:
        terminalreporter.write_line(line)
