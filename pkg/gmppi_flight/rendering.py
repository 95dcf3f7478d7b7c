"""Analytic depth rendering of a forest: ray against finite vertical cylinders and the ground plane."""

from __future__ import annotations

import logging

import numpy as np

from .core import FloatArray, Pose, Vec3
from .forest import Forest
from .perception import DEFAULT_RANGE, CameraModel, DepthFrame, camera_placement

logger = logging.getLogger(__name__)

RAY_EPS = 1e-9


def _cylinder_hits(origin: Vec3, dirs: FloatArray, forest: Forest, reach: float) -> FloatArray:
    """Nearest positive hit distance per ray over all trees whose footprint lies within ``reach``."""
    centers, radii, heights = forest.centers, forest.radii, forest.heights
    near = np.hypot(centers[:, 0] - origin[0], centers[:, 1] - origin[1]) - radii <= reach
    if not np.any(near):
        return np.full(dirs.shape[0], np.inf)
    centers, radii, heights = centers[near], radii[near], heights[near]

    ox = origin[0] - centers[:, 0]
    oy = origin[1] - centers[:, 1]
    dx, dy, dz = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]

    # side wall: |o_xy + t d_xy|^2 = r^2
    a = dx * dx + dy * dy
    half_b = dx * ox + dy * oy
    c = ox * ox + oy * oy - radii * radii
    disc = half_b * half_b - a * c
    a_safe = np.where(a > RAY_EPS, a, 1.0)
    root = np.sqrt(np.maximum(disc, 0.0))
    t_near = (-half_b - root) / a_safe
    t_far = (-half_b + root) / a_safe
    # an origin inside a trunk sees its far wall
    t_side = np.where(t_near > 0.0, t_near, t_far)
    z_side = origin[2] + t_side * dz
    side_ok = (disc >= 0.0) & (a > RAY_EPS) & (t_side > 0.0) & (z_side >= 0.0) & (z_side <= heights)
    t_side = np.where(side_ok, t_side, np.inf)

    # top cap at z = height
    dz_safe = np.where(np.abs(dz) > RAY_EPS, dz, 1.0)
    t_cap = (heights - origin[2]) / dz_safe
    cap_x = ox + t_cap * dx
    cap_y = oy + t_cap * dy
    cap_ok = (np.abs(dz) > RAY_EPS) & (t_cap > 0.0) & (cap_x * cap_x + cap_y * cap_y <= radii * radii)
    t_cap = np.where(cap_ok, t_cap, np.inf)

    return np.min(np.minimum(t_side, t_cap), axis=1)


def cast_rays(
    origin: Vec3, dirs: FloatArray, forest: Forest | None, range_m: float = DEFAULT_RANGE, ground: bool = True
) -> FloatArray:
    """Distance along unit rays ``(..., 3)`` to the first surface; ``inf`` past ``range_m``."""
    origin = np.asarray(origin, dtype=np.float64)
    flat = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    hits = np.full(flat.shape[0], np.inf)

    if ground:
        dz = flat[:, 2]
        t_ground = np.where(dz < -RAY_EPS, -origin[2] / np.where(dz < -RAY_EPS, dz, -1.0), np.inf)
        hits = np.minimum(hits, np.where(t_ground > 0.0, t_ground, np.inf))

    if forest is not None and forest.trees:
        hits = np.minimum(hits, _cylinder_hits(origin, flat, forest, range_m))

    hits = np.where(hits <= range_m, hits, np.inf)
    return hits.reshape(np.shape(dirs)[:-1])


def render_depth(
    pose: Pose, camera: CameraModel, forest: Forest | None, range_m: float = DEFAULT_RANGE, ground: bool = True
) -> DepthFrame:
    """Render the ray-distance image a camera on a body at ``pose`` would see."""
    rot, origin = camera_placement(pose, camera)
    rays_cam = camera.ray_directions()
    rays_world = (
        rays_cam[..., 0:1] * rot[:, 0] + rays_cam[..., 1:2] * rot[:, 1] + rays_cam[..., 2:3] * rot[:, 2]
    )
    depths = cast_rays(origin, rays_world, forest, range_m, ground)
    logger.debug("Rendered depth frame at %s, %.1f%% no-return", np.round(origin, 2), 100 * np.mean(np.isinf(depths)))
    return DepthFrame(depths=depths, capture_pose=pose, camera=camera, range_m=range_m)
