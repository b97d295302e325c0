import numpy as np
import pytest

from hjmput.curves import SpaceConfig, build_basis


@pytest.fixture(scope="session")
def space():
    return SpaceConfig()


@pytest.fixture(scope="session")
def basis(space):
    return build_basis(space)


@pytest.fixture(scope="session")
def fine_space():
    # high-resolution grid for quadrature-sensitive oracles
    return SpaceConfig(n_x=2048)


@pytest.fixture(scope="session")
def fine_basis(fine_space):
    return build_basis(fine_space)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
