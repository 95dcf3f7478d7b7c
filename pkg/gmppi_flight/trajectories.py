"""Analytic reference trajectories with closed-form derivatives up to jerk."""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Tuple, Type

import numpy as np

from .core import HEADING_DEGENERACY, FloatArray, Vec3

logger = logging.getLogger(__name__)


class UnknownTrajectoryError(ValueError):
    """Raised for a trajectory kind that has no generator."""


@dataclass(frozen=True)
class TrajectorySample:
    """Position and derivatives, each of shape ``(..., 3)``."""

    p: FloatArray
    v: FloatArray
    a: FloatArray
    j: FloatArray


def _planar(x: FloatArray, y: FloatArray, z: FloatArray | float) -> FloatArray:
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return np.stack((x, y, np.broadcast_to(np.asarray(z, dtype=np.float64), x.shape)), axis=-1)


class ReferenceTrajectory(ABC):
    kind: str = ""

    @property
    @abstractmethod
    def duration(self) -> float: ...

    @abstractmethod
    def sample(self, t: FloatArray | float) -> TrajectorySample:
        """Evaluate the analytic position, velocity, acceleration and jerk at ``t``."""

    def fallback_heading(self) -> Vec3:
        return np.array([1.0, 0.0, 0.0])

    def heading(self, t: FloatArray | float) -> FloatArray:
        """Horizontal projection of the velocity, or the fallback heading where it vanishes."""
        v = self.sample(t).v
        planar = np.sqrt(v[..., 0] ** 2 + v[..., 1] ** 2)
        degenerate = planar < HEADING_DEGENERACY
        safe = np.where(degenerate, 1.0, planar)
        h = np.stack((v[..., 0] / safe, v[..., 1] / safe, np.zeros_like(safe)), axis=-1)
        return np.where(degenerate[..., None], self.fallback_heading(), h)

    def end_position(self) -> Vec3:
        return self.sample(self.duration).p

    def peak_speed(self, samples: int = 4096) -> float:
        t = np.linspace(0.0, self.duration, samples)
        v = self.sample(t).v
        return float(np.max(np.linalg.norm(v, axis=-1)))


@dataclass(frozen=True)
class HoverTrajectory(ReferenceTrajectory):
    position: Tuple[float, float, float] = (0.0, 0.0, 2.0)
    hold: float = 10.0
    yaw: float = 0.0
    kind: str = field(default="hover", init=False)

    @property
    def duration(self) -> float:
        return self.hold

    def fallback_heading(self) -> Vec3:
        return np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0])

    def sample(self, t: FloatArray | float) -> TrajectorySample:
        shape = np.shape(t) + (3,)
        zeros = np.zeros(shape)
        return TrajectorySample(p=np.broadcast_to(np.asarray(self.position), shape).copy(), v=zeros, a=zeros, j=zeros)


@dataclass(frozen=True)
class LineTrajectory(ReferenceTrajectory):
    """Constant-speed straight line starting at ``start`` along ``direction``."""

    start: Tuple[float, float, float] = (0.0, 0.0, 1.5)
    direction: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    length: float = 40.0
    speed: float = 5.0
    kind: str = field(default="line", init=False)

    def __post_init__(self) -> None:
        if self.speed <= 0 or self.length <= 0:
            raise ValueError("line trajectories need positive speed and length")

    @property
    def duration(self) -> float:
        return self.length / self.speed

    def _unit(self) -> Vec3:
        d = np.asarray(self.direction, dtype=np.float64)
        return d / np.linalg.norm(d)

    def fallback_heading(self) -> Vec3:
        d = self._unit()
        planar = math.hypot(d[0], d[1])
        if planar > HEADING_DEGENERACY:
            return np.array([d[0] / planar, d[1] / planar, 0.0])
        return super().fallback_heading()

    def sample(self, t: FloatArray | float) -> TrajectorySample:
        t = np.asarray(t, dtype=np.float64)
        d = self._unit()
        p = np.asarray(self.start) + (self.speed * t)[..., None] * d
        v = np.broadcast_to(self.speed * d, p.shape).copy()
        zeros = np.zeros(p.shape)
        return TrajectorySample(p=p, v=v, a=zeros, j=zeros)


@dataclass(frozen=True)
class Figure8Trajectory(ReferenceTrajectory):
    """Lissajous figure-8 ``(A sin ωt, B sin 2ωt)`` whose peak speed (at the crossing) is ``speed``."""

    center: Tuple[float, float, float] = (0.0, 0.0, 2.0)
    extent_x: float = 15.0
    extent_y: float = 7.5
    speed: float = 8.0
    laps: float = 2.0
    kind: str = field(default="figure8", init=False)

    @property
    def omega(self) -> float:
        a, b = 0.5 * self.extent_x, 0.5 * self.extent_y
        return self.speed / math.sqrt(a * a + 4.0 * b * b)

    @property
    def duration(self) -> float:
        return self.laps * 2.0 * math.pi / self.omega

    def sample(self, t: FloatArray | float) -> TrajectorySample:
        t = np.asarray(t, dtype=np.float64)
        a, b, w = 0.5 * self.extent_x, 0.5 * self.extent_y, self.omega
        s1, c1 = np.sin(w * t), np.cos(w * t)
        s2, c2 = np.sin(2 * w * t), np.cos(2 * w * t)
        cx, cy, cz = self.center
        return TrajectorySample(
            p=_planar(cx + a * s1, cy + b * s2, cz),
            v=_planar(a * w * c1, 2 * b * w * c2, 0.0),
            a=_planar(-a * w**2 * s1, -4 * b * w**2 * s2, 0.0),
            j=_planar(-a * w**3 * c1, -8 * b * w**3 * c2, 0.0),
        )


@dataclass(frozen=True)
class HypotrochoidTrajectory(ReferenceTrajectory):
    """Hypotrochoid of a circle of radius ``r`` rolling inside ``R`` with pen offset ``d``, scaled."""

    center: Tuple[float, float, float] = (0.0, 0.0, 2.0)
    big_radius: float = 6.0
    small_radius: float = 2.0
    pen_offset: float = 1.0
    scale: float = 1.5
    speed: float = 8.0
    laps: float = 1.0
    kind: str = field(default="hypotrochoid", init=False)

    def _unit_speed_peak(self) -> float:
        theta = np.linspace(0.0, 2.0 * math.pi * self.small_radius, 8192)
        dx, dy = self._shape_derivative(theta, 1)
        return float(np.max(np.hypot(dx, dy))) * self.scale

    def _radii(self) -> Tuple[float, float, float]:
        r_diff = self.big_radius - self.small_radius
        return r_diff, r_diff / self.small_radius, self.pen_offset

    def _shape(self, theta: FloatArray) -> Tuple[FloatArray, FloatArray]:
        r_diff, k, d = self._radii()
        return r_diff * np.cos(theta) + d * np.cos(k * theta), r_diff * np.sin(theta) - d * np.sin(k * theta)

    def _shape_derivative(self, theta: FloatArray, order: int) -> Tuple[FloatArray, FloatArray]:
        r_diff, k, d = self._radii()
        # d^n/dθ^n of cos(cθ) = c^n cos(cθ + nπ/2), likewise for sin
        shift = 0.5 * math.pi * order
        dx = r_diff * np.cos(theta + shift) + d * k**order * np.cos(k * theta + shift)
        dy = r_diff * np.sin(theta + shift) - d * k**order * np.sin(k * theta + shift)
        return dx, dy

    @property
    def omega(self) -> float:
        return self.speed / self._unit_speed_peak()

    @property
    def duration(self) -> float:
        # the curve closes after small_radius/gcd revolutions; integer radii assumed
        revolutions = self.small_radius / math.gcd(int(self.big_radius), int(self.small_radius))
        return self.laps * 2.0 * math.pi * revolutions / self.omega

    def sample(self, t: FloatArray | float) -> TrajectorySample:
        t = np.asarray(t, dtype=np.float64)
        w, s = self.omega, self.scale
        theta = w * t
        cx, cy, cz = self.center
        x, y = self._shape(theta)
        derivs = [self._shape_derivative(theta, n) for n in (1, 2, 3)]
        return TrajectorySample(
            p=_planar(cx + s * x, cy + s * y, cz),
            v=_planar(s * w * derivs[0][0], s * w * derivs[0][1], 0.0),
            a=_planar(s * w**2 * derivs[1][0], s * w**2 * derivs[1][1], 0.0),
            j=_planar(s * w**3 * derivs[2][0], s * w**3 * derivs[2][1], 0.0),
        )


TRAJECTORY_KINDS: Dict[str, Type[ReferenceTrajectory]] = {
    "hover": HoverTrajectory,
    "line": LineTrajectory,
    "figure8": Figure8Trajectory,
    "fig8": Figure8Trajectory,
    "hypotrochoid": HypotrochoidTrajectory,
}


def make_reference(kind: str, params: Mapping[str, Any] | None = None) -> ReferenceTrajectory:
    try:
        factory = TRAJECTORY_KINDS[kind]
    except KeyError:
        expected = sorted(TRAJECTORY_KINDS)
        raise UnknownTrajectoryError(f"unknown trajectory kind {kind!r}; expected one of {expected}") from None
    trajectory = factory(**dict(params or {}))
    logger.debug("Built %s reference lasting %.2f s", trajectory.kind, trajectory.duration)
    return trajectory
