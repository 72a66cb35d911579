import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "cdml", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("cdml")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
