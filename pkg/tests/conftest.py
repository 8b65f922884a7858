import numpy as np
import pytest
from hypothesis import settings

from acmimlln import autodiff as ad

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def float64():
    with ad.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
