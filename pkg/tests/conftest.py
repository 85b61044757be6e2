import numpy as np
import pytest

from smpnp import mesh as meshmod
from smpnp.physics_model import ModelConstants, mixture_species


@pytest.fixture(scope="session")
def cube_mesh():
    return meshmod.unit_cube_mesh(3)


@pytest.fixture(scope="session")
def channel_mesh():
    return meshmod.synth_channel_mesh(meshmod.ChannelGeometry(resolution=8))


@pytest.fixture(scope="session")
def channel_submesh(channel_mesh):
    return meshmod.extract_solvent_submesh(channel_mesh)


@pytest.fixture(scope="session")
def species4():
    return mixture_species()


@pytest.fixture(scope="session")
def species4_pnp():
    return mixture_species(sized=False)


@pytest.fixture(scope="session")
def constants():
    return ModelConstants()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
