import numpy as np
import pytest

from lrspatial.model import DesignData
from lrspatial.weights import build_delaunay_adjacency, scale_by_max_eigenvalue


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="run the long Monte Carlo acceptance tests",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def delaunay_weights(n: int, seed: int = 0):
    """(unscaled, scaled) Delaunay weights on standard normal points."""
    rng = np.random.default_rng(seed)
    w0 = build_delaunay_adjacency(rng.standard_normal((n, 2)))
    return w0, scale_by_max_eigenvalue(w0)


def random_design(n: int, covariates: int = 2, seed: int = 0) -> DesignData:
    rng = np.random.default_rng(seed + 1000)
    X = rng.standard_normal((n, covariates))
    y = 1.0 + X @ np.arange(1, covariates + 1, dtype=float) + rng.standard_normal(n)
    return DesignData.from_arrays(y, X)


@pytest.fixture
def weights_40():
    return delaunay_weights(40, seed=3)


@pytest.fixture
def data_40():
    return random_design(40, seed=3)
