import numpy as np
import pytest

from name_demand.core.config_manager import MisspecConfig, SparseConfig
from name_demand.core.dataset import IndividualSample, Dataset, validate_dataset
from name_demand.core.types import MarketData
from name_demand.simulation.dgp import gen_misspec, gen_sparse


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run Monte Carlo acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo acceptance checks, run with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def misspec_config():
    return MisspecConfig(M=20, N=500, J=2)


@pytest.fixture(scope="session")
def misspec_data(misspec_config):
    """(dataset, truth) of a small misspecification replication"""
    return gen_misspec(misspec_config, seed=3)


@pytest.fixture(scope="session")
def noiseless_data():
    """Misspecification design without unobserved quality"""
    return gen_misspec(MisspecConfig(M=20, N=500, J=2, xi_sd=0.0), seed=5)


@pytest.fixture(scope="session")
def sparse_config():
    return SparseConfig(M=10, N=400, p=5, p0=2, active_per_market=1, B=2)


@pytest.fixture(scope="session")
def sparse_data(sparse_config):
    return gen_sparse(sparse_config, seed=11)


def make_market(market_id, X, P, shares, W=None):
    X = np.asarray(X, dtype=float)
    return MarketData(market_id, X, P, np.zeros((X.shape[0], 0)) if W is None else W, shares)


@pytest.fixture
def tiny_dataset():
    """Two markets, two goods, hand-written individuals"""
    markets = (
        make_market(0, [[1.0], [2.0]], [1.0, 1.5], [0.5, 0.25, 0.25]),
        make_market(1, [[0.5], [1.5]], [0.8, 1.2], [0.25, 0.5, 0.25]),
    )
    samples = {
        0: IndividualSample(0, [[0.1], [0.4], [-0.3], [1.2]], [0, 0, 1, 2]),
        1: IndividualSample(1, [[0.0], [0.7], [-1.1], [0.3]], [1, 1, 0, 2]),
    }
    return validate_dataset(Dataset(markets, samples))
