import numpy as np
import pytest

from dyadiclab import build_grid


@pytest.fixture
def small_grid():
    return build_grid(16, 64, 4.0, 20.0)


@pytest.fixture
def mid_grid():
    return build_grid(32, 256, 8.0, 68.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
