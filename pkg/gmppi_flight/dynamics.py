"""Quadrotor plant with linear drag, RK4 integration and command clamping.

The same kernel integrates every rollout of the controller and the simulated vehicle itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .core import (
    COMMAND_SIZE,
    Command,
    CommandLimits,
    FloatArray,
    P,
    Q,
    State,
    V,
    VehicleParams,
    W,
    quat_norm,
    quat_normalize,
)


@dataclass(frozen=True)
class BodyRateTracking:
    """First-order surrogate of the low-level rate loop: ``ω̇ = k (ω_c − ω) − J⁻¹(ω × Jω)``.

    ``perfect`` replaces the lag by direct assignment ``ω := ω_c`` at the start of each step.
    """

    rate_gain: float = 50.0
    perfect: bool = False

    def __post_init__(self) -> None:
        if self.rate_gain <= 0:
            raise ValueError(f"rate_gain must be positive, got {self.rate_gain}")


DEFAULT_TRACKING = BodyRateTracking()


def clamp_command_array(u: FloatArray, limits: CommandLimits) -> FloatArray:
    return np.clip(u, limits.lower(), limits.upper())


def clamp_command(u: Command, limits: CommandLimits) -> Command:
    return Command.from_array(clamp_command_array(u.to_array(), limits))


RIGID_SIZE = 10


def _rigid_derivative(x: FloatArray, u: FloatArray, w: FloatArray, params: VehicleParams) -> FloatArray:
    """``(ṗ, v̇, q̇)`` of packed states ``(..., 13)`` flying body rates ``w``, shape ``(..., 10)``."""
    q = x[..., Q]
    inv_norm = 1.0 / quat_norm(q)
    qw, qx, qy, qz = (q[..., i] * inv_norm for i in range(4))
    r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
    r01 = 2.0 * (qx * qy - qw * qz)
    r02 = 2.0 * (qx * qz + qw * qy)
    r10 = 2.0 * (qx * qy + qw * qz)
    r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
    r12 = 2.0 * (qy * qz - qw * qx)
    r20 = 2.0 * (qx * qz - qw * qy)
    r21 = 2.0 * (qy * qz + qw * qx)
    r22 = 1.0 - 2.0 * (qx * qx + qy * qy)

    vx, vy, vz = x[..., 3], x[..., 4], x[..., 5]
    drag = np.asarray(params.drag_diag)
    fx = -drag[0] * (r00 * vx + r10 * vy + r20 * vz)
    fy = -drag[1] * (r01 * vx + r11 * vy + r21 * vz)
    fz = u[..., 0] - drag[2] * (r02 * vx + r12 * vy + r22 * vz)
    gravity = np.asarray(params.gravity)

    out = np.empty(x.shape[:-1] + (RIGID_SIZE,))
    out[..., P] = x[..., V]
    out[..., 3] = (r00 * fx + r01 * fy + r02 * fz) / params.mass + gravity[0]
    out[..., 4] = (r10 * fx + r11 * fy + r12 * fz) / params.mass + gravity[1]
    out[..., 5] = (r20 * fx + r21 * fy + r22 * fz) / params.mass + gravity[2]

    # ½ q ⊙ [0, ω] on the unnormalized q
    q0, q1, q2, q3 = x[..., 6], x[..., 7], x[..., 8], x[..., 9]
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    out[..., 6] = -0.5 * (q1 * wx + q2 * wy + q3 * wz)
    out[..., 7] = 0.5 * (q0 * wx + q2 * wz - q3 * wy)
    out[..., 8] = 0.5 * (q0 * wy - q1 * wz + q3 * wx)
    out[..., 9] = 0.5 * (q0 * wz + q1 * wy - q2 * wx)
    return out


def _gyroscopic(w: FloatArray, params: VehicleParams) -> FloatArray:
    """``−J⁻¹(ω × Jω)`` for a diagonal inertia."""
    jx, jy, jz = np.asarray(params.inertia_diag)
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    return np.stack(((jy - jz) / jx * wy * wz, (jz - jx) / jy * wz * wx, (jx - jy) / jz * wx * wy), axis=-1)


def derivative_array(
    x: FloatArray,
    u: FloatArray,
    params: VehicleParams,
    tracking: BodyRateTracking = DEFAULT_TRACKING,
) -> FloatArray:
    """Time derivative of packed states ``(..., 13)`` under packed commands ``(..., 4)``."""
    w = x[..., W]
    rigid = _rigid_derivative(x, u, w, params)
    if tracking.perfect:
        w_dot = np.zeros(rigid.shape[:-1] + (3,))
    else:
        w_dot = tracking.rate_gain * (u[..., 1:COMMAND_SIZE] - w) + _gyroscopic(w, params)
    return np.concatenate((rigid, w_dot), axis=-1)


def state_derivative(
    x: State,
    u: Command,
    params: VehicleParams,
    tracking: BodyRateTracking = DEFAULT_TRACKING,
) -> FloatArray:
    """Return ``(ṗ, v̇, q̇, ω̇)`` packed as a 13-vector."""
    return derivative_array(x.to_array(), u.to_array(), params, tracking)


def rk4_step_array(
    x: FloatArray,
    u: FloatArray,
    dt: float | FloatArray,
    params: VehicleParams,
    tracking: BodyRateTracking = DEFAULT_TRACKING,
) -> FloatArray:
    """Fourth-order step with the command held for the whole step.

    Position, velocity and attitude follow classical RK4. The rate lag ``−k (ω − ω_c)`` is
    integrated exactly through its integrating factor and the gyroscopic coupling rides on the
    same four stages, so any ``k h`` stays stable. Stage quaternions are integrated linearly, the
    rotation they induce is evaluated on the normalized quaternion and the result is renormalized.
    """
    h = np.asarray(dt, dtype=np.float64)
    if h.ndim:
        h = h[..., None]
    w_c = u[..., 1:COMMAND_SIZE]
    rigid = x[..., :RIGID_SIZE]

    if tracking.perfect:
        w1 = w2 = w3 = w4 = w_end = w_c
    else:
        decay = np.exp(-0.5 * tracking.rate_gain * h)
        y0 = x[..., W] - w_c
        g1 = _gyroscopic(x[..., W], params)
        y2 = decay * (y0 + 0.5 * h * g1)
        g2 = _gyroscopic(w_c + y2, params)
        y3 = decay * y0 + 0.5 * h * g2
        g3 = _gyroscopic(w_c + y3, params)
        y4 = decay * decay * y0 + h * decay * g3
        g4 = _gyroscopic(w_c + y4, params)
        y_end = decay * decay * y0 + (h / 6.0) * (decay * decay * g1 + 2.0 * decay * (g2 + g3) + g4)
        w1, w2, w3, w4, w_end = x[..., W], w_c + y2, w_c + y3, w_c + y4, w_c + y_end

    k1 = _rigid_derivative(x, u, w1, params)
    k2 = _rigid_derivative(rigid + 0.5 * h * k1, u, w2, params)
    k3 = _rigid_derivative(rigid + 0.5 * h * k2, u, w3, params)
    k4 = _rigid_derivative(rigid + h * k3, u, w4, params)
    x_next = np.empty(x.shape)
    x_next[..., :RIGID_SIZE] = rigid + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    x_next[..., Q] = quat_normalize(x_next[..., Q])
    x_next[..., W] = w_end
    return x_next


def rk4_step(
    x: State,
    u: Command,
    dt: float,
    params: VehicleParams,
    tracking: BodyRateTracking = DEFAULT_TRACKING,
) -> State:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return State.from_array(rk4_step_array(x.to_array(), u.to_array(), dt, params, tracking))


def rollout_open_loop_array(
    x0: FloatArray,
    us: FloatArray,
    dts: FloatArray,
    params: VehicleParams,
    tracking: BodyRateTracking = DEFAULT_TRACKING,
) -> FloatArray:
    """Chain :func:`rk4_step_array` over ``us`` of shape ``(..., N, 4)``; returns ``(..., N+1, 13)``."""
    n_steps = us.shape[-2]
    if len(dts) != n_steps:
        raise ValueError(f"got {n_steps} commands but {len(dts)} step lengths")
    batch = us.shape[:-2]
    states = np.empty(batch + (n_steps + 1, x0.shape[-1]))
    states[..., 0, :] = np.broadcast_to(x0, batch + (x0.shape[-1],))
    for j in range(n_steps):
        states[..., j + 1, :] = rk4_step_array(states[..., j, :], us[..., j, :], float(dts[j]), params, tracking)
    return states


def rollout_open_loop(
    x0: State,
    us: Sequence[Command],
    dts: Sequence[float],
    params: VehicleParams,
    tracking: BodyRateTracking = DEFAULT_TRACKING,
) -> List[State]:
    if len(us) != len(dts):
        raise ValueError(f"got {len(us)} commands but {len(dts)} step lengths")
    states = [x0]
    for u, dt in zip(us, dts):
        states.append(rk4_step(states[-1], u, dt, params, tracking))
    return states

