import numpy as np
import pytest

from oliva.app.models.dataset import Dataset
from oliva.app.simulation.simulate import DgpConfig, gen_dgp


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in ('OLIVA_THREADS', 'OLIVA_LOG_LEVEL', 'OLIVA_DISCRETE_LEVELS',
                 'OLIVA_SPLINE_DEGREE'):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def dgp1_data():
    return gen_dgp(DgpConfig(dgp=1, rho=0.3, gamma=0.8, n=500, seed=11))


@pytest.fixture
def toy_data(rng):
    """Twenty rows with a continuous regressor and instrument."""
    n = 20
    z = rng.uniform(-1.0, 1.0, n)
    x = 0.7 * z + 0.3 * rng.normal(size=n)
    y = x + x ** 2 + 0.1 * rng.normal(size=n)
    return Dataset.simple(y, x, z)


@pytest.fixture
def binary_data(rng):
    """Binary X2 driven by a three-level instrument."""
    n = 300
    z = rng.integers(0, 3, n).astype(float)
    x2 = (rng.uniform(size=n) < np.array([0.2, 0.5, 0.8])[z.astype(int)]).astype(float)
    y = 1.0 + 2.0 * x2 + rng.normal(size=n)
    return Dataset.simple(y, x2, z)
