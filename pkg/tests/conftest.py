import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def clustered(rng, n, k, d, spread=0.3):
    """Unit anchors plus unit features scattered around a random anchor each."""
    t = unit_rows(rng, k, d)
    labels = rng.integers(0, k, size=n)
    f = t[labels] + spread * rng.standard_normal((n, d))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    return f, t, labels


def random_simplex(rng, n, k, conc=1.0):
    return rng.dirichlet(np.full(k, conc), size=n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
