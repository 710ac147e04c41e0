from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ecobench", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ecobench")


@pytest.fixture(scope="session")
def flows():
    from ecobench.dataset import generate_synthetic

    return generate_synthetic(400, 0.25, 1.0, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
