import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from renormlab.environment import EnvironmentSpec, sample_environment
from renormlab.scales import ScaleParams, build_hierarchy

settings.register_profile(
    "renormlab",
    max_examples=100,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("renormlab")


@pytest.fixture(scope="session")
def small_hierarchy():
    """Two levels: L = 5, 25 (kappa~ about 1.02 at c0 = 0.05)."""
    return build_hierarchy(ScaleParams(d=2, beta=0.5, a=1.0, L0=5, c0=0.05, N=1))


@pytest.fixture(scope="session")
def env2():
    return EnvironmentSpec(d=2, eta0=0.1)


@pytest.fixture(scope="session")
def real2(env2):
    return sample_environment(env2, 7, (np.zeros(2), 40.0))
