import numpy as np
import pytest
from hypothesis import settings

from bdpkit.io import load_dataset
from bdpkit.models import builtin_model
from bdpkit.simulate import simulate_discrete

# fixed example streams keep the suite reproducible run to run
settings.register_profile("bdpkit", derandomize=True, deadline=None)
settings.load_profile("bdpkit")

VERHULST_TRUE = (0.8, 0.4, 0.025, 0.0)
OBS_TIMES = np.arange(100.0)


def verhulst_paths(seed, k=5, times=OBS_TIMES):
    """Five Verhulst paths observed at integer times, started from 5."""
    p = simulate_discrete(builtin_model("Verhulst"), VERHULST_TRUE, 5, times, k=k, seed=seed)
    return [times] * k, [row.astype(float) for row in p]


@pytest.fixture(scope="session")
def robin():
    return load_dataset("robin")


@pytest.fixture(scope="session")
def crane():
    return load_dataset("crane")


@pytest.fixture(scope="session")
def verhulst_data():
    return verhulst_paths(2021)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
