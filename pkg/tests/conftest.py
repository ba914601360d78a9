import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cmotion.harness import default_stereo_rig

settings.register_profile(
    "ci",
    deadline=None,
    derandomize=True,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def rig():
    return default_stereo_rig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
