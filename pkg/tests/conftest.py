import warnings

import numpy as np
import pytest

from skysim.dynamics import UavModel, UavState
from skysim.worldgen import TerrainParams, make_world, update_cells

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture(scope="session")
def quad():
    return UavModel.default_quad_x()


@pytest.fixture()
def hover_state(quad):
    return UavState.at_rest(quad, position=(0.0, 0.0, 20.0))


@pytest.fixture(scope="session")
def flat_world():
    """Two active cells of flat, foliage-free terrain at z = 0."""
    params = TerrainParams(amplitude=0.0, forest_density=0.0,
                           grid_resolution=9)
    world = make_world(params)
    update_cells(world, [np.array([50.0, 50.0, 50.0])])
    return world


@pytest.fixture(scope="session")
def hilly_world():
    params = TerrainParams(seed=11, grid_resolution=17, amplitude=6.0,
                           forest_density=0.005)
    world = make_world(params)
    update_cells(world, [np.array([50.0, 50.0, 40.0])])
    return world
