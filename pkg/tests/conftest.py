import os

import numpy as np
import pytest

from redfa.model import DataMatrix, Hyperparameters, Partition, SamplerState

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "redfa", "data")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_paths():
    return {
        "spectra": os.path.join(DATA_DIR, "toy_spectra.csv"),
        "responses": os.path.join(DATA_DIR, "toy_responses.csv"),
        "design": os.path.join(DATA_DIR, "toy_design.json"),
    }


def small_problem(n=30, p=6, K=2, G=3, seed=0):
    """Random data with a random state of matching dimensions."""
    rng = np.random.default_rng(seed)
    data = DataMatrix.from_array(rng.standard_normal((n, p)))
    part = Partition(np.arange(p) % G, G)
    state = SamplerState.build(data, part, rng.standard_normal((G, K)),
                               rng.uniform(0.3, 1.5, p), rng.standard_normal((n, K)))
    return data, state, Hyperparameters.from_data(data)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
