from __future__ import annotations

import numpy as np
import pytest

from gmppi_flight.core import CommandLimits, VehicleParams
from gmppi_flight.gmppi import GmppiConfig, TimestepConfig
from gmppi_flight.perception import CameraModel
from gmppi_flight.trajectories import HoverTrajectory, LineTrajectory


@pytest.fixture
def params() -> VehicleParams:
    return VehicleParams()


@pytest.fixture
def limits() -> CommandLimits:
    return CommandLimits()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg() -> GmppiConfig:
    """A controller small enough for unit tests: two random blocks and one geometric block."""
    return GmppiConfig(n_rollouts=96, n_se3=32, horizon_steps=10, timesteps=TimestepConfig(near_steps=3), block_size=32)


@pytest.fixture
def hover_ref() -> HoverTrajectory:
    return HoverTrajectory(position=(0.0, 0.0, 2.0), hold=5.0)


@pytest.fixture
def line_ref() -> LineTrajectory:
    return LineTrajectory(start=(0.0, 0.0, 1.5), direction=(1.0, 0.0, 0.0), length=40.0, speed=5.0)


@pytest.fixture
def camera() -> CameraModel:
    return CameraModel.from_fov()

