import numpy as np
import pytest

from nlrbf.experiment import ExperimentConfig, prepare_level

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def level_cache():
    """Centers, basis and weights per spacing, shared across test modules."""
    cache = {}

    def get(spacing):
        if spacing not in cache:
            cache[spacing] = prepare_level(ExperimentConfig(), spacing)
        return cache[spacing]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
