import numpy as np
import pytest

from hyplab import fuchsian as fg
from hyplab import qdiff
from hyplab.context import LabContext
from hyplab.mesh import build_octagon_mesh


@pytest.fixture(scope="session")
def group():
    return fg.octagon_group()


@pytest.fixture(scope="session")
def mesh3(group):
    return build_octagon_mesh(3, group=group)


@pytest.fixture(scope="session")
def mesh4(group):
    return build_octagon_mesh(4, group=group)


@pytest.fixture(scope="session")
def qd5(group):
    return qdiff.poincare_series_qd(group, (1.0,), 5)


@pytest.fixture(scope="session")
def ctx3(mesh3, qd5):
    """Small working context: r=3 mesh with the depth-5 constant-seed series."""
    return LabContext(mesh3, qd5)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
