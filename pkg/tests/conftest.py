import numpy as np
import pytest
from hypothesis import settings

from aclab.mesh import BoxDomain, build_mesh

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def mesh5():
    return build_mesh(BoxDomain.centered_unit(3), 5)


@pytest.fixture(scope="session")
def mesh9():
    return build_mesh(BoxDomain.centered_unit(3), 9)


@pytest.fixture(scope="session")
def mesh17():
    return build_mesh(BoxDomain.centered_unit(3), 17)


@pytest.fixture(scope="session")
def unit_mesh9():
    return build_mesh(BoxDomain.unit(3), 9)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
