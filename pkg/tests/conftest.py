# tests/conftest.py
import numpy as np
import pytest

from earlystop.app.complexity import EmpiricalComplexity
from earlystop.app.kernels import build_empirical_kernel, sobolev_kernel
from earlystop.app.settings import get_settings


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    monkeypatch.delenv("EARLYSTOP_THREADS", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def grid_design():
    def make(n):
        return np.arange(1, n + 1, dtype=float) / n
    return make


@pytest.fixture
def sobolev_K(grid_design):
    return build_empirical_kernel(sobolev_kernel(), grid_design(10))


@pytest.fixture
def two_point_ec():
    return EmpiricalComplexity(eigenvalues=np.array([1.0, 0.25]), n=2)
