import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, density=0.4):
    B = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    return B @ B.T + n * np.eye(n)
