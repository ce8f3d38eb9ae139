import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dtnprobe import Conductivity, build_domain, build_patches, extend_domain

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def grid9():
    return build_domain(3, 9)


@pytest.fixture(scope="session")
def grid17():
    return build_domain(3, 17)


@pytest.fixture(scope="session")
def patches17(grid17):
    return build_patches(grid17, r0=0.36, r1=0.44)


@pytest.fixture(scope="session")
def ext17(grid17, patches17):
    return extend_domain(grid17, patches17)


@pytest.fixture(scope="session")
def identity_A():
    return Conductivity.identity(3)


@pytest.fixture(scope="session")
def aniso_A():
    return Conductivity.from_matrix(np.array([[1.2, 0.2, 0.1], [0.2, 1.0, 0.05], [0.1, 0.05, 0.9]]))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture(scope="session")
def load_fixture():
    def load(name):
        return json.loads((FIXTURES / f"{name}.json").read_text())

    return load
