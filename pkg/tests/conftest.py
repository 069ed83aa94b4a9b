import numpy as np
import pytest

from deepmvc.datasets import generate_blobs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs2():
    """Noiseless-ish 2-view blobs used by the instance tests."""
    return generate_blobs(300, 2, 3, 8, 0.05, seed=0)
