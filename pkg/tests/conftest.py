import numpy as np
import pytest

from flowcal import DataSpec


@pytest.fixture(scope="session")
def spec():
    return DataSpec(mean=0.0, variance=1.0, alpha=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
