import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from picekit.benchmarks import LqgSpec, build_lqg  # noqa: E402
from picekit.sde import DynamicsModel  # noqa: E402


@pytest.fixture
def brownian():
    """f = 0, g = 1, nu = 1 scalar diffusion."""
    return DynamicsModel(1, 1, lambda t, x: np.zeros_like(x), np.ones((1, 1)), np.eye(1))


@pytest.fixture
def lqg_spec():
    return LqgSpec()


@pytest.fixture
def lqg(lqg_spec):
    return build_lqg(lqg_spec)
