import numpy as np
import pytest

from swirlshock.harness.config import default_config
from swirlshock.harness.pipeline import run_background

import cases


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture(scope="session")
def bg(cfg):
    return run_background(cfg)


@pytest.fixture(scope="session")
def solved():
    """solved(epsilon, n, reconstruct=True) with results shared across tests."""
    return cases.solved


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
