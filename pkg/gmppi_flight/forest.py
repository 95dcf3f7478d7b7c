"""Poisson forests of vertical cylinders and the ground-truth collision geometry against them."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull

from .core import FloatArray, Pose, VehicleParams, quat_rotate

logger = logging.getLogger(__name__)

TREE_RADIUS = 0.3
TREE_HEIGHT = 10.0
CLEARING_RADIUS = 2.0
DEFAULT_DENSITY = 1.0 / 25.0
DEFAULT_BOUNDS = (0.0, 40.0, -15.0, 15.0)
MAX_REJECTIONS = 1000

Bounds = Tuple[float, float, float, float]
Clearing = Tuple[Tuple[float, float], float]


@dataclass(frozen=True)
class Tree:
    x: float
    y: float
    radius: float = TREE_RADIUS
    height: float = TREE_HEIGHT

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError(f"tree radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Forest:
    """Trees inside ``bounds = (x_min, x_max, y_min, y_max)``."""

    trees: Tuple[Tree, ...] = ()
    bounds: Bounds = DEFAULT_BOUNDS
    density: float = DEFAULT_DENSITY
    seed: int = 0
    clearings: Tuple[Clearing, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.trees)

    @property
    def centers(self) -> FloatArray:
        return np.array([(t.x, t.y) for t in self.trees], dtype=np.float64).reshape(-1, 2)

    @property
    def radii(self) -> FloatArray:
        return np.array([t.radius for t in self.trees], dtype=np.float64)

    @property
    def heights(self) -> FloatArray:
        return np.array([t.height for t in self.trees], dtype=np.float64)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "density": self.density,
            "bounds": list(self.bounds),
            "clearings": [[list(c), r] for c, r in self.clearings],
            "trees": [asdict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> Forest:
        return cls(
            trees=tuple(Tree(**t) for t in data["trees"]),
            bounds=tuple(data["bounds"]),  # type: ignore[arg-type]
            density=float(data["density"]),
            seed=int(data["seed"]),
            clearings=tuple((tuple(c), float(r)) for c, r in data.get("clearings", [])),  # type: ignore[misc]
        )

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: Path) -> Forest:
        return cls.from_dict(json.loads(path.read_text()))


def _in_clearing(x: float, y: float, radius: float, clearings: Sequence[Clearing]) -> bool:
    return any(np.hypot(x - cx, y - cy) - radius < r for (cx, cy), r in clearings)


def generate_forest(
    density: float,
    bounds: Bounds = DEFAULT_BOUNDS,
    seed: int = 0,
    radius: float = TREE_RADIUS,
    height: float = TREE_HEIGHT,
    clearings: Sequence[Clearing] = (((0.0, 0.0), CLEARING_RADIUS),),
) -> Forest:
    """Draw a Poisson number of trees uniformly in ``bounds``.

    A tree whose trunk reaches into a clearing is redrawn, so the count stays Poisson distributed.
    """
    if density <= 0:
        raise ValueError(f"density must be positive, got {density}")
    x_min, x_max, y_min, y_max = bounds
    area = max(x_max - x_min, 0.0) * max(y_max - y_min, 0.0)
    rng = np.random.default_rng(seed)
    count = int(rng.poisson(density * area)) if area > 0 else 0

    trees = []
    for _ in range(count):
        for _ in range(MAX_REJECTIONS):
            x, y = float(rng.uniform(x_min, x_max)), float(rng.uniform(y_min, y_max))
            if not _in_clearing(x, y, radius, clearings):
                trees.append(Tree(x, y, radius, height))
                break
        else:
            logger.warning("Could not place a tree outside the clearings after %d draws", MAX_REJECTIONS)

    logger.debug("Generated forest seed=%d with %d trees over %.0f m^2", seed, len(trees), area)
    return Forest(tuple(trees), tuple(bounds), density, seed, tuple(clearings))  # type: ignore[arg-type]


def box_corners(pose: Pose, params: VehicleParams) -> FloatArray:
    """World coordinates of the eight corners of the unscaled vehicle box."""
    half = 0.5 * params.dims
    signs = np.array([(sx, sy, sz) for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)], dtype=np.float64)
    q = np.broadcast_to(np.asarray(pose.attitude, dtype=np.float64), (8, 4))
    return np.asarray(pose.position, dtype=np.float64) + quat_rotate(q, signs * half)


def _distance_to_polygon(vertices: FloatArray, points: FloatArray) -> FloatArray:
    """Distance from 2D ``points`` to a counter-clockwise convex polygon, zero inside."""
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    edge = b - a
    rel = points[:, None, :] - a[None, :, :]
    cross = edge[None, :, 0] * rel[..., 1] - edge[None, :, 1] * rel[..., 0]
    inside = np.all(cross >= 0.0, axis=1)
    length2 = np.sum(edge * edge, axis=-1)
    # zero-length edges snap to their start vertex
    t = np.clip(np.sum(rel * edge[None], axis=-1) / np.where(length2 > 0.0, length2, 1.0)[None], 0.0, 1.0)
    nearest = a[None] + t[..., None] * edge[None]
    dist = np.min(np.linalg.norm(points[:, None, :] - nearest, axis=-1), axis=1)
    return np.where(inside, 0.0, dist)


def _footprint(corners: FloatArray) -> FloatArray:
    planar = np.unique(np.round(corners[:, :2], 12), axis=0)
    # joggled so a box seen edge-on still yields a hull
    hull = ConvexHull(planar, qhull_options="QJ")
    return planar[hull.vertices]


def tree_clearances(pose: Pose, params: VehicleParams, forest: Forest) -> FloatArray:
    """Horizontal gap between the vehicle box and each trunk, negative when they overlap.

    Trees shorter than the lowest box corner report ``inf``.
    """
    if not forest.trees:
        return np.empty(0)
    corners = box_corners(pose, params)
    gap = _distance_to_polygon(_footprint(corners), forest.centers) - forest.radii
    return np.where(forest.heights < corners[:, 2].min(), np.inf, gap)


def ground_clearance(pose: Pose, params: VehicleParams) -> float:
    return float(box_corners(pose, params)[:, 2].min())


def clearance(pose: Pose, params: VehicleParams, forest: Forest | None) -> float:
    """Smallest gap to any tree or the ground; non-positive means the box touches an obstacle."""
    gaps = [ground_clearance(pose, params)]
    if forest is not None and forest.trees:
        gaps.append(float(tree_clearances(pose, params, forest).min()))
    return min(gaps)


def collides(pose: Pose, params: VehicleParams, forest: Forest | None) -> bool:
    return clearance(pose, params, forest) <= 0.0
