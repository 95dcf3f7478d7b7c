"""Vectors, unit quaternions, states and commands shared by every other module.

Quaternions are scalar-first ``(w, x, y, z)`` Hamilton quaternions rotating body vectors into the
world frame. All array helpers accept arbitrary leading batch dimensions, so the same code path
serves a single state and a ``(K, ...)`` batch of rollouts bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
Vec3 = FloatArray
UnitQuat = FloatArray

STATE_SIZE = 13
COMMAND_SIZE = 4

# packed state layout
P = slice(0, 3)
V = slice(3, 6)
Q = slice(6, 10)
W = slice(10, 13)

HEADING_DEGENERACY = 1e-6

IDENTITY_QUAT: UnitQuat = np.array([1.0, 0.0, 0.0, 0.0])
E1: Vec3 = np.array([1.0, 0.0, 0.0])
E3: Vec3 = np.array([0.0, 0.0, 1.0])


def vec3(x: float, y: float, z: float) -> Vec3:
    return np.array([x, y, z], dtype=np.float64)


def norm3(v: FloatArray) -> FloatArray:
    """Euclidean norm over the last axis, written out so batch and scalar paths agree bit-for-bit."""
    return np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1] + v[..., 2] * v[..., 2])


def dot3(a: FloatArray, b: FloatArray) -> FloatArray:
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def cross3(a: FloatArray, b: FloatArray) -> FloatArray:
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack((ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx), axis=-1)


def quat_norm(q: FloatArray) -> FloatArray:
    return np.sqrt(q[..., 0] * q[..., 0] + q[..., 1] * q[..., 1] + q[..., 2] * q[..., 2] + q[..., 3] * q[..., 3])


def quat_normalize(q: FloatArray) -> FloatArray:
    return q / quat_norm(q)[..., None]


def quat_conjugate(q: FloatArray) -> FloatArray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_multiply(a: FloatArray, b: FloatArray) -> FloatArray:
    """Hamilton product ``a ⊙ b``."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        (
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ),
        axis=-1,
    )


def quat_rotate(q: UnitQuat, v: Vec3) -> Vec3:
    """Return ``R(q) v``."""
    w = q[..., 0:1]
    u = q[..., 1:4]
    t = 2.0 * cross3(u, v)
    return v + w * t + cross3(u, t)


def quat_to_rotmat(q: UnitQuat) -> FloatArray:
    """Rotation matrix of shape ``(..., 3, 3)`` with body axes as columns."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = (
        (1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)),
        (2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)),
        (2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)),
    )
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def quat_from_axis_angle(axis: Vec3, angle: float) -> UnitQuat:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / norm3(axis)
    half = 0.5 * angle
    return np.concatenate(([math.cos(half)], math.sin(half) * axis))


def quat_from_yaw(yaw: float) -> UnitQuat:
    return quat_from_axis_angle(E3, yaw)


def quat_step(q: UnitQuat, w: Vec3, dt: float) -> UnitQuat:
    """Advance ``q̇ = ½ q ⊙ [0, ω]`` over ``dt`` for body rates held constant, renormalized.

    Uses the exponential map, which is exact for constant ``ω``.
    """
    w = np.asarray(w, dtype=np.float64)
    half = 0.5 * norm3(w) * dt
    # sin(half)/|w| written through np.sinc so that |w| = 0 needs no branch
    scale = 0.5 * dt * np.sinc(half / np.pi)
    dq = np.concatenate((np.cos(half)[..., None], w * np.asarray(scale)[..., None]), axis=-1)
    return quat_normalize(quat_multiply(q, dq))


def quat_distance(q1: UnitQuat, q2: UnitQuat) -> FloatArray:
    """Orientation difference ``1 − ⟨q1, q2⟩²``; zero for equal rotations regardless of sign."""
    inner = q1[..., 0] * q2[..., 0] + q1[..., 1] * q2[..., 1] + q1[..., 2] * q2[..., 2] + q1[..., 3] * q2[..., 3]
    return np.clip(1.0 - inner * inner, 0.0, 1.0)


def heading_of(q: UnitQuat) -> Tuple[FloatArray, FloatArray]:
    """Horizontal unit heading of the body x-axis plus a degeneracy mask."""
    body_x = quat_rotate(q, np.broadcast_to(E1, np.shape(q)[:-1] + (3,)))
    planar = np.sqrt(body_x[..., 0] * body_x[..., 0] + body_x[..., 1] * body_x[..., 1])
    degenerate = planar < HEADING_DEGENERACY
    safe = np.where(degenerate, 1.0, planar)
    heading = np.stack((body_x[..., 0] / safe, body_x[..., 1] / safe, np.zeros_like(safe)), axis=-1)
    heading = np.where(degenerate[..., None], E1, heading)
    return heading, degenerate


def heading_angle_error(q: UnitQuat, h_ref: Vec3) -> Tuple[FloatArray, FloatArray]:
    """Signed angle from the body heading to ``h_ref`` in ``(−π, π]`` and a degeneracy mask.

    Degenerate inputs (near-vertical body x-axis or a reference without horizontal extent)
    yield an angle of 0.
    """
    body_x = quat_rotate(q, np.broadcast_to(E1, np.shape(q)[:-1] + (3,)))
    hx, hy = body_x[..., 0], body_x[..., 1]
    rx, ry = h_ref[..., 0], h_ref[..., 1]
    degenerate = (np.sqrt(hx * hx + hy * hy) < HEADING_DEGENERACY) | (np.sqrt(rx * rx + ry * ry) < HEADING_DEGENERACY)
    angle = np.arctan2(hx * ry - hy * rx, hx * rx + hy * ry)
    # the branch at ±π resolves toward +π
    angle = np.where(angle <= -np.pi, np.pi, angle)
    angle = np.where(degenerate, 0.0, angle)
    return angle, degenerate


@dataclass(frozen=True)
class Pose:
    """World pose of the body frame."""

    position: Vec3
    attitude: UnitQuat = field(default_factory=IDENTITY_QUAT.copy)

    def rotation(self) -> FloatArray:
        return quat_to_rotmat(np.asarray(self.attitude, dtype=np.float64))


@dataclass(frozen=True)
class State:
    p: Vec3
    v: Vec3
    q: UnitQuat
    w: Vec3

    @classmethod
    def at_rest(cls, position: Vec3, attitude: UnitQuat | None = None) -> State:
        return cls(
            p=np.asarray(position, dtype=np.float64),
            v=np.zeros(3),
            q=IDENTITY_QUAT.copy() if attitude is None else np.asarray(attitude, dtype=np.float64),
            w=np.zeros(3),
        )

    @classmethod
    def from_array(cls, x: FloatArray) -> State:
        x = np.asarray(x, dtype=np.float64)
        return cls(p=x[P].copy(), v=x[V].copy(), q=x[Q].copy(), w=x[W].copy())

    def to_array(self) -> FloatArray:
        return np.concatenate((self.p, self.v, self.q, self.w)).astype(np.float64)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_array())))

    def pose(self) -> Pose:
        return Pose(position=self.p.copy(), attitude=self.q.copy())

    def __str__(self) -> str:
        return f"State(p={np.round(self.p, 3)}, v={np.round(self.v, 3)}, q={np.round(self.q, 4)})"


@dataclass(frozen=True)
class Command:
    """Collective thrust in newtons plus commanded body rates."""

    thrust: float
    body_rates: Vec3 = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def from_array(cls, u: FloatArray) -> Command:
        u = np.asarray(u, dtype=np.float64)
        return cls(thrust=float(u[0]), body_rates=u[1:4].copy())

    def to_array(self) -> FloatArray:
        return np.concatenate(([self.thrust], np.asarray(self.body_rates, dtype=np.float64)))


@dataclass(frozen=True)
class CommandLimits:
    thrust_min: float = 0.46
    thrust_max: float = 20.6
    rate_xy_max: float = 10.0
    rate_z_max: float = 2.0

    def lower(self) -> FloatArray:
        return np.array([self.thrust_min, -self.rate_xy_max, -self.rate_xy_max, -self.rate_z_max])

    def upper(self) -> FloatArray:
        return np.array([self.thrust_max, self.rate_xy_max, self.rate_xy_max, self.rate_z_max])


@dataclass(frozen=True)
class VehicleParams:
    """Rigid-body and geometry parameters of the simulated quadrotor.

    ``arm_length`` and ``torque_const`` are carried for completeness; the body-rate command
    interface never allocates individual rotor thrusts.
    """

    mass: float = 1.21
    arm_length: float = 0.15
    torque_const: float = 0.012
    inertia_diag: Vec3 = field(default_factory=lambda: np.array([7.06e-3, 7.06e-3, 13.6e-3]))
    length: float = 0.35
    width: float = 0.35
    height: float = 0.215
    drag_diag: Vec3 = field(default_factory=lambda: np.array([0.28, 0.35, 0.7]))
    gravity: Vec3 = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if np.any(np.asarray(self.inertia_diag) <= 0):
            raise ValueError("inertia components must be positive")
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("vehicle dimensions must be positive")
        if np.any(np.asarray(self.drag_diag) < 0):
            raise ValueError("drag coefficients must be non-negative")

    @property
    def g_mag(self) -> float:
        return float(norm3(np.asarray(self.gravity)))

    @property
    def hover_thrust(self) -> float:
        return self.mass * self.g_mag

    @property
    def dims(self) -> Vec3:
        return np.array([self.length, self.width, self.height])
