"""Geometric SE(3) tracking law producing collective thrust and body-rate commands.

Used standalone as the baseline controller and inside the geometric rollouts of the sampling
controller, where every rollout runs with its own perturbed gain vector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .core import (
    E3,
    Command,
    CommandLimits,
    FloatArray,
    P,
    Q,
    State,
    V,
    VehicleParams,
    cross3,
    dot3,
    norm3,
    quat_conjugate,
    quat_multiply,
    quat_to_rotmat,
)
from .dynamics import clamp_command_array
from .trajectories import ReferenceTrajectory

logger = logging.getLogger(__name__)

FORCE_DEGENERACY = 1e-6
AXIS_DEGENERACY = 1e-6
FLAT_DIFF_STEP = 1e-3
DEFAULT_MAX_TILT_DEG = 70.0
N_GAINS = 6


@dataclass(frozen=True)
class Se3Gains:
    kp_xy: float = 6.0
    kp_z: float = 15.0
    kv_xy: float = 4.0
    kv_z: float = 8.0
    kr_xy: float = 5.0
    kr_z: float = 5.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"gain {f.name} must be non-negative")

    def to_array(self) -> FloatArray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_array(cls, k: FloatArray) -> Se3Gains:
        return cls(*(float(value) for value in k))


@dataclass(frozen=True)
class FlatReferencePoint:
    """Reference sampled from a trajectory; every field may carry leading time dimensions.

    ``thrust`` is the feed-forward collective thrust ``m‖a_ref − g‖``.
    """

    t: FloatArray
    p_ref: FloatArray
    v_ref: FloatArray
    a_ref: FloatArray
    j_ref: FloatArray
    h_ref: FloatArray
    q_ref: FloatArray
    w_ref: FloatArray
    thrust: FloatArray

    def __len__(self) -> int:
        return int(np.shape(self.t)[0]) if np.ndim(self.t) else 1

    def __getitem__(self, index: int | slice) -> FlatReferencePoint:
        return FlatReferencePoint(**{f.name: getattr(self, f.name)[index] for f in fields(self)})

    def command_array(self) -> FloatArray:
        """Feed-forward commands ``(…, 4)``: thrust plus reference body rates."""
        return np.concatenate((np.asarray(self.thrust)[..., None], self.w_ref), axis=-1)


def _limit_tilt(axis_force: FloatArray, max_tilt: float) -> FloatArray:
    """Pull force vectors that lean further than ``max_tilt`` from vertical back onto the cone."""
    horizontal = np.sqrt(axis_force[..., 0] ** 2 + axis_force[..., 1] ** 2)
    min_z = horizontal / math.tan(max_tilt)
    limited = axis_force.copy()
    limited[..., 2] = np.maximum(axis_force[..., 2], min_z)
    # a purely downward demand keeps the vehicle level
    return np.where((norm3(limited) < FORCE_DEGENERACY)[..., None], E3, limited)


def desired_rotation(thrust_axis: FloatArray, heading: FloatArray, fallback_x: FloatArray) -> FloatArray:
    """Rotation ``[x_d y_d z_d]`` with ``z_d`` along ``thrust_axis`` and ``x_d`` closest to ``heading``.

    Where ``z_d × heading`` degenerates the x-axis comes from ``fallback_x``.
    """
    z_d = thrust_axis / norm3(thrust_axis)[..., None]
    degenerate = norm3(cross3(z_d, heading)) < AXIS_DEGENERACY
    x_src = np.where(degenerate[..., None], fallback_x, heading)
    x_d = x_src - dot3(x_src, z_d)[..., None] * z_d
    x_norm = norm3(x_d)
    x_d = x_d / np.where(x_norm < AXIS_DEGENERACY, 1.0, x_norm)[..., None]
    y_d = cross3(z_d, x_d)
    return np.stack((x_d, y_d, z_d), axis=-1)


def _rotation_error(rot_d: FloatArray, rot: FloatArray) -> FloatArray:
    """``½ (R_dᵀR − RᵀR_d)ᵛ`` from column dot products; entry (i, k) of R_dᵀR is d_i · r_k."""
    d = [rot_d[..., :, i] for i in range(3)]
    r = [rot[..., :, i] for i in range(3)]
    return 0.5 * np.stack(
        (
            dot3(d[2], r[1]) - dot3(d[1], r[2]),
            dot3(d[0], r[2]) - dot3(d[2], r[0]),
            dot3(d[1], r[0]) - dot3(d[0], r[1]),
        ),
        axis=-1,
    )


def se3_command_array(
    x: FloatArray,
    ref: FlatReferencePoint,
    gains: FloatArray,
    params: VehicleParams,
    limits: CommandLimits,
    max_tilt_deg: float = DEFAULT_MAX_TILT_DEG,
) -> FloatArray:
    """Batched SE(3) law over packed states ``(..., 13)`` and gain vectors ``(..., 6)``."""
    gains = np.asarray(gains, dtype=np.float64)
    kp = gains[..., [0, 0, 1]]
    kv = gains[..., [2, 2, 3]]
    kr = gains[..., [4, 4, 5]]

    rot = quat_to_rotmat(x[..., Q])
    e_p = x[..., P] - ref.p_ref
    e_v = x[..., V] - ref.v_ref
    f_des = -kp * e_p - kv * e_v + params.mass * ref.a_ref + params.mass * params.g_mag * E3

    body_z = rot[..., :, 2]
    thrust = dot3(f_des, body_z)

    degenerate = norm3(f_des) < FORCE_DEGENERACY
    axis = np.where(degenerate[..., None], body_z, _limit_tilt(f_des, math.radians(max_tilt_deg)))
    rot_d = desired_rotation(axis, np.broadcast_to(ref.h_ref, axis.shape), rot[..., :, 0])

    e_rot = _rotation_error(rot_d, rot)
    e_rot = np.where(degenerate[..., None], 0.0, e_rot)

    rates = -kr * e_rot + ref.w_ref
    u = np.concatenate((np.asarray(thrust)[..., None], rates), axis=-1)
    return clamp_command_array(u, limits)


def se3_command(
    x: State,
    ref: FlatReferencePoint,
    gains: Se3Gains,
    params: VehicleParams,
    limits: CommandLimits,
    max_tilt_deg: float = DEFAULT_MAX_TILT_DEG,
) -> Command:
    return Command.from_array(se3_command_array(x.to_array(), ref, gains.to_array(), params, limits, max_tilt_deg))


def perturb_gains_array(base: Se3Gains, sigma: FloatArray, normals: FloatArray) -> FloatArray:
    """``k + σ·z`` for standard normals ``z`` of shape ``(..., 6)``, clamped at zero."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("gain noise must be non-negative")
    return np.maximum(base.to_array() + sigma * normals, 0.0)


def perturb_gains(base: Se3Gains, sigma: FloatArray, rng: np.random.Generator) -> Se3Gains:
    return Se3Gains.from_array(perturb_gains_array(base, sigma, rng.standard_normal(N_GAINS)))


def _attitude_from_flat(a: FloatArray, heading: FloatArray, gravity: FloatArray) -> FloatArray:
    thrust_dir = a - gravity
    rot = desired_rotation(thrust_dir, heading, np.broadcast_to(heading, thrust_dir.shape))
    flat = rot.reshape(-1, 3, 3)
    xyzw = Rotation.from_matrix(flat).as_quat()
    wxyz = np.concatenate((xyzw[:, 3:4], xyzw[:, 0:3]), axis=-1)
    return wxyz.reshape(rot.shape[:-2] + (4,))


def flat_reference(
    traj: ReferenceTrajectory,
    t: FloatArray | float,
    params: VehicleParams,
) -> Tuple[FlatReferencePoint, FloatArray]:
    """Sample ``traj`` at ``t`` and complete it through differential flatness (drag ignored).

    Times outside the span are clamped to the nearest endpoint; the second return value flags them.
    """
    t_raw = np.asarray(t, dtype=np.float64)
    t_c = np.clip(t_raw, 0.0, traj.duration)
    clamped = t_c != t_raw

    gravity = np.asarray(params.gravity)
    sample = traj.sample(t_c)
    heading = traj.heading(t_c)
    q_ref = _attitude_from_flat(sample.a, heading, gravity)

    # body rates from a central difference of the attitude, taken on the unclamped analytic curve
    q_minus = _attitude_from_flat(traj.sample(t_c - FLAT_DIFF_STEP).a, traj.heading(t_c - FLAT_DIFF_STEP), gravity)
    q_plus = _attitude_from_flat(traj.sample(t_c + FLAT_DIFF_STEP).a, traj.heading(t_c + FLAT_DIFF_STEP), gravity)
    q_minus = np.where((np.sum(q_minus * q_ref, axis=-1) < 0)[..., None], -q_minus, q_minus)
    q_plus = np.where((np.sum(q_plus * q_ref, axis=-1) < 0)[..., None], -q_plus, q_plus)
    q_dot = (q_plus - q_minus) / (2.0 * FLAT_DIFF_STEP)
    w_ref = 2.0 * quat_multiply(quat_conjugate(q_ref), q_dot)[..., 1:4]

    thrust = params.mass * norm3(sample.a - gravity)
    point = FlatReferencePoint(
        t=t_c,
        p_ref=sample.p,
        v_ref=sample.v,
        a_ref=sample.a,
        j_ref=sample.j,
        h_ref=heading,
        q_ref=q_ref,
        w_ref=w_ref,
        thrust=thrust,
    )
    return point, clamped


def reference_state(point: FlatReferencePoint) -> State:
    """Vehicle state that sits exactly on a single reference point."""
    return State(
        p=np.asarray(point.p_ref, dtype=np.float64).copy(),
        v=np.asarray(point.v_ref, dtype=np.float64).copy(),
        q=np.asarray(point.q_ref, dtype=np.float64).copy(),
        w=np.asarray(point.w_ref, dtype=np.float64).copy(),
    )

