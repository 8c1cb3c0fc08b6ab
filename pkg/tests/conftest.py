import numpy as np
import pytest

from holmix.maps import HollandMap, z_ladder
from holmix.measure import induced_density, pull_back_density
from holmix.slowvary import SlowVaryFn


@pytest.fixture(scope="session")
def small_map():
    return HollandMap(gamma=0.25, rho=SlowVaryFn("const"))


@pytest.fixture(scope="session")
def small_ladder(small_map):
    return z_ladder(small_map, 1200)


@pytest.fixture(scope="session")
def small_induced(small_map, small_ladder):
    return induced_density(small_map, small_ladder, cells=128, max_R=1100)


@pytest.fixture(scope="session")
def small_density(small_map, small_ladder, small_induced):
    return pull_back_density(small_map, small_ladder, small_induced,
                             n_terms=1100)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
