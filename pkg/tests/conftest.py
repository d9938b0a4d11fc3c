import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# BLAS warm-up and background threads make wall-clock per-example timing
# meaningless; disable hypothesis deadlines globally.
settings.register_profile(
    "dmap",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("dmap")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
