import numpy as np
import pytest

from anisofrac.core import GridSpec, sample
from anisofrac.experiments import line_grid


@pytest.fixture(scope="session")
def coarse_line():
    return line_grid(256)


@pytest.fixture(scope="session")
def tent(coarse_line):
    return sample({"kind": "tent"}, coarse_line)


@pytest.fixture(scope="session")
def square():
    return GridSpec.from_domain([(0.0, 1.0), (0.0, 1.0)], 12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
