import numpy as np
import pytest
from hypothesis import settings

from dpsc.core import Dataset

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def unit_ball_data(n, p, seed, separable=True):
    """Random dataset with rows inside the unit ball."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    X /= np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1.0) * rng.uniform(1.0, 1.5, (n, 1))
    w = rng.standard_normal(p) * 3
    if separable:
        y = np.where(X @ w >= 0, 1.0, -1.0)
    else:
        y = np.where(rng.uniform(size=n) < 1 / (1 + np.exp(-X @ w)), 1.0, -1.0)
    return Dataset(X, y)


@pytest.fixture
def small_data():
    return unit_ball_data(60, 5, seed=11)
