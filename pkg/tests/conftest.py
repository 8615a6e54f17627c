import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from iwsft import kernels  # noqa: E402
from iwsft.data import ActionSpace, Trajectory, TrajectoryDataset  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


BACKENDS = [pytest.param(kernels.python_backend, id="python")]
if kernels.compiled_backend is not None:
    BACKENDS.append(pytest.param(kernels.compiled_backend, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def returns_dataset(returns, state_dim=1):
    trajs = [Trajectory(np.zeros((1, state_dim)), np.array([0]), r) for r in returns]
    return TrajectoryDataset(tuple(trajs), state_dim, ActionSpace.discrete(2))


@pytest.fixture
def make_returns_dataset():
    return returns_dataset
