import os

os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from trackfusion.config import toy_config
from trackfusion.pianoroll import Pianoroll


def random_params(shapes, seed=0, low=-1.0, high=1.0):
    """Parameters spread wide enough that every gradient sits well above FD round-off."""
    rng = np.random.default_rng(seed)
    return {k: rng.uniform(low, high, s) for k, s in shapes.items()}


def random_roll(shape, seed=0, density=0.3, names=()):
    rng = np.random.default_rng(seed)
    cells = np.where(rng.random(shape) < density, 1, -1).astype(np.int8)
    return Pianoroll(cells, names)


@pytest.fixture
def cfg():
    return toy_config()


# PASS/FAIL lines from test_acceptance.py, echoed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
