import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybridtomo.core import default_theta_axis, default_x_axis

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def x_axis():
    return default_x_axis()


@pytest.fixture(scope="session")
def theta_axis():
    return default_theta_axis()


@pytest.fixture(scope="session")
def small_axes():
    """64 X points x 32 angles: the per-particle grid of 4-D runs."""
    return default_x_axis(64), default_theta_axis(32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def report(capsys):
    """Print a line straight to the terminal, bypassing capture."""
    def emit(line):
        with capsys.disabled():
            print(line)
    return emit
