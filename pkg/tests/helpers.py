from __future__ import annotations

import numpy as np

from gmppi_flight.core import Pose
from gmppi_flight.perception import CameraModel, DepthFrame


def random_unit_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def flat_frame(camera: CameraModel, depth: float, position=(0.0, 0.0, 0.0), range_m: float = 13.0) -> DepthFrame:
    """A frame whose every pixel reports the same ray distance, captured at identity attitude."""
    depths = np.full((camera.height, camera.width), depth)
    return DepthFrame(depths, Pose(np.asarray(position, dtype=np.float64)), camera, range_m)
