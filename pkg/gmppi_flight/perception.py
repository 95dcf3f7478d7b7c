"""Depth frames and the projective collision test run on every rollout state.

A world point is moved into the camera frame of the pose the frame was captured at, projected
through the pinhole model and looked up at the nearest pixel. It counts as occupied when its ray
distance lies between the sensed surface and ``d_a`` metres behind it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Tuple

import numpy as np

from .core import FloatArray, Pose, Vec3, VehicleParams, dot3

logger = logging.getLogger(__name__)

DEFAULT_RANGE = 13.0
DEFAULT_WIDTH = 96
DEFAULT_HEIGHT = 72
DEFAULT_HFOV_DEG = 87.0

# flight speed (m/s) -> upward camera tilt (deg)
CAMERA_TILT_TABLE: Tuple[Tuple[float, float], ...] = (
    (3.0, 8.0),
    (5.0, 10.0),
    (7.0, 16.0),
    (9.0, 22.0),
    (10.0, 22.0),
    (11.0, 27.0),
    (12.0, 27.0),
    (13.0, 30.0),
)


def tilt_for_speed(speed: float) -> float:
    """Camera tilt for a flight speed, interpolated linearly and held constant outside the table."""
    speeds, tilts = zip(*CAMERA_TILT_TABLE)
    return float(np.interp(speed, speeds, tilts))


def _mount_rotation(tilt_deg: float) -> FloatArray:
    # optical z along body x, image x along body -y, image y along body -z
    base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    t = math.radians(tilt_deg)
    pitch_up = np.array([[math.cos(t), 0.0, -math.sin(t)], [0.0, 1.0, 0.0], [math.sin(t), 0.0, math.cos(t)]])
    return pitch_up @ base


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the rigid mount from camera to body frame.

    Image x points right, image y down and the optical axis along camera z. ``tilt_deg`` pitches
    the optical axis up from the body x-axis.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    tilt_deg: float = 0.0
    mount_translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) lies outside the image")

    @classmethod
    def from_fov(
        cls,
        width: int = DEFAULT_WIDTH,
        height: int = DEFAULT_HEIGHT,
        hfov_deg: float = DEFAULT_HFOV_DEG,
        tilt_deg: float = 0.0,
        mount_translation: Tuple[float, float, float] = (0.0, 0.0, 0.0),
    ) -> CameraModel:
        f = 0.5 * width / math.tan(0.5 * math.radians(hfov_deg))
        return cls(
            fx=f,
            fy=f,
            cx=0.5 * width,
            cy=0.5 * height,
            width=width,
            height=height,
            tilt_deg=tilt_deg,
            mount_translation=mount_translation,
        )

    def with_tilt(self, tilt_deg: float) -> CameraModel:
        return CameraModel(
            self.fx, self.fy, self.cx, self.cy, self.width, self.height, tilt_deg, self.mount_translation
        )

    @property
    def mount_rotation(self) -> FloatArray:
        """Rotation taking camera-frame vectors into the body frame."""
        return _mount_rotation(self.tilt_deg)

    def intrinsic_matrix(self) -> FloatArray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def ray_directions(self) -> FloatArray:
        """Unit viewing rays through every pixel centre in the camera frame, shape ``(H, W, 3)``."""
        u, v = np.meshgrid(np.arange(self.width, dtype=np.float64), np.arange(self.height, dtype=np.float64))
        rays = np.stack(((u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)), axis=-1)
        return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def camera_placement(pose: Pose, camera: CameraModel) -> Tuple[FloatArray, Vec3]:
    """Rotation ``R(q) M`` and world origin of the camera for a body pose."""
    rot_body = pose.rotation()
    rot = rot_body @ camera.mount_rotation
    origin = np.asarray(pose.position, dtype=np.float64) + rot_body @ np.asarray(camera.mount_translation)
    return rot, origin


@dataclass(frozen=True, eq=False)
class DepthFrame:
    """Ray distances in metres on a ``(height, width)`` grid; ``inf`` marks pixels without a return."""

    depths: FloatArray
    capture_pose: Pose
    camera: CameraModel
    range_m: float = DEFAULT_RANGE

    def __post_init__(self) -> None:
        shape = (self.camera.height, self.camera.width)
        if np.shape(self.depths) != shape:
            raise ValueError(f"depth grid {np.shape(self.depths)} does not match camera {shape}")
        if self.range_m <= 0:
            raise ValueError("sensor range must be positive")

    @classmethod
    def empty(cls, camera: CameraModel, pose: Pose, range_m: float = DEFAULT_RANGE) -> DepthFrame:
        return cls(np.full((camera.height, camera.width), np.inf), pose, camera, range_m)

    @cached_property
    def camera_to_world(self) -> Tuple[FloatArray, Vec3]:
        return camera_placement(self.capture_pose, self.camera)

    def no_return_fraction(self) -> float:
        return float(np.mean(~np.isfinite(self.depths)))


@dataclass(frozen=True)
class Projection:
    """Continuous pixel coordinates, camera distance and the behind-camera flag for a batch of points."""

    u: FloatArray
    v: FloatArray
    distance: FloatArray
    behind: FloatArray


@dataclass(frozen=True)
class CollisionBoxParams:
    length: float
    width: float
    height: float
    epsilon: float = 1.2
    d_a: float = 2.0
    offsets: FloatArray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.epsilon <= 1:
            raise ValueError(f"safety multiplier must exceed 1, got {self.epsilon}")
        if self.d_a <= 0:
            raise ValueError(f"assumed obstacle depth must be positive, got {self.d_a}")
        half = 0.5 * self.epsilon * np.array([self.length, self.width, self.height])
        signs = np.array([(sx, sy, sz) for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)], dtype=np.float64)
        object.__setattr__(self, "offsets", np.vstack((signs * half, np.zeros(3))))

    @classmethod
    def from_vehicle(cls, params: VehicleParams, epsilon: float = 1.2, d_a: float = 2.0) -> CollisionBoxParams:
        return cls(params.length, params.width, params.height, epsilon, d_a)


def corner_set(p: FloatArray, box: CollisionBoxParams) -> FloatArray:
    """The eight expanded box corners followed by the centre, shape ``(..., 9, 3)``."""
    return np.asarray(p, dtype=np.float64)[..., None, :] + box.offsets


def world_to_pixel(points: FloatArray, frame: DepthFrame) -> Projection:
    """Project world points through the capture pose of ``frame``.

    Points whose optical-axis coordinate is not positive are flagged ``behind``; their pixel
    coordinates are meaningless.
    """
    rot, origin = frame.camera_to_world
    d = np.asarray(points, dtype=np.float64) - origin
    xc = dot3(d, rot[:, 0])
    yc = dot3(d, rot[:, 1])
    zc = dot3(d, rot[:, 2])
    behind = zc <= 0.0
    z_safe = np.where(behind, 1.0, zc)
    cam = frame.camera
    return Projection(
        u=cam.fx * xc / z_safe + cam.cx,
        v=cam.fy * yc / z_safe + cam.cy,
        distance=np.sqrt(xc * xc + yc * yc + zc * zc),
        behind=behind,
    )


def lookup_depth(projection: Projection, frame: DepthFrame) -> FloatArray:
    """Depth at the nearest pixel, clamped into the image for out-of-view projections.

    Non-finite projections read as ``inf``.
    """
    cam = frame.camera
    valid = np.isfinite(projection.u) & np.isfinite(projection.v)
    col = np.clip(np.rint(np.where(valid, projection.u, 0.0)), 0, cam.width - 1).astype(np.intp)
    row = np.clip(np.rint(np.where(valid, projection.v, 0.0)), 0, cam.height - 1).astype(np.intp)
    return np.where(valid, frame.depths[row, col], np.inf)


def point_collides(points: FloatArray, frame: DepthFrame, d_a: float) -> FloatArray:
    """True where the point lies within ``[d_px, d_px + d_a]`` along its viewing ray.

    Points with non-finite coordinates never collide.
    """
    projection = world_to_pixel(points, frame)
    d_px = lookup_depth(projection, frame)
    # inf depths fail the lower bound, so no-return pixels never collide
    inside = (projection.distance >= d_px) & (projection.distance <= d_px + d_a)
    return inside & ~projection.behind


def state_collision_count(p: FloatArray, frame: DepthFrame, box: CollisionBoxParams) -> FloatArray:
    """Number of colliding points among the corner set of each position, in ``[0, 9]``."""
    hits = point_collides(corner_set(p, box), frame, box.d_a)
    return np.count_nonzero(hits, axis=-1)
