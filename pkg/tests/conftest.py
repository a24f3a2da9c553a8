import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=30,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def harmonic_spec():
    """d=1 gradient model F(q) = q with gamma = 1 (complex spectrum)."""
    from langmix.harness import corpus_spec

    return corpus_spec("lin1d_complex")


@pytest.fixture
def real_spectrum_spec():
    """d=1 gradient model F(q) = q with gamma = 3 (real distinct spectrum)."""
    from langmix.harness import corpus_spec

    return corpus_spec("lin1d_real")


@pytest.fixture
def quartic_spec():
    """d=1 quartic gradient model U = q^4/4 + q^2/2."""
    from langmix.harness import corpus_spec

    return corpus_spec("quartic")
