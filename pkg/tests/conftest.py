import numpy as np
import pytest

from patchguard.toydata import make_toy_dataset


@pytest.fixture(scope="session")
def toy_dataset():
    # committed-seed synthetic benchmark used by the end-to-end tests
    return make_toy_dataset(seed=42)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
