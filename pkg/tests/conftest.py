import numpy as np
import pytest
from hypothesis import settings

from roverlab import rng as rngmod
from roverlab import terrain
from roverlab.env import DomainConfig, ObstacleKind
from roverlab.rover import ControlLimits, RoverGeometry

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


FLAT_SUB = (terrain.SubTerrainConfig(proportion=1.0, noise_min=0.05, noise_max=0.05,
                                     noise_step=0.01, border_width=0.0),)


def flat_terrain_config(seed: int = 0, size: float = 15.0) -> terrain.TerrainConfig:
    return terrain.TerrainConfig(size_x=size, size_y=size, sub_terrains=FLAT_SUB,
                                 seed=seed)


@pytest.fixture(scope="session")
def flat_field():
    return terrain.generate_heightfield(flat_terrain_config())


@pytest.fixture
def geometry():
    return RoverGeometry()


@pytest.fixture
def limits():
    return ControlLimits()


def make_domain(obstacle_count=0, goal_fixed=None, seed=0, **kw) -> DomainConfig:
    return DomainConfig(obstacle_count=obstacle_count, goal_fixed=goal_fixed,
                        terrain=flat_terrain_config(seed), **kw)


def make_rng(seed=0, stream_id=12345):
    return rngmod.stream(seed, stream_id)
