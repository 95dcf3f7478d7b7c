from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gmppi_flight.core import (
    IDENTITY_QUAT,
    Command,
    Pose,
    State,
    heading_angle_error,
    heading_of,
    quat_distance,
    quat_from_axis_angle,
    quat_from_yaw,
    quat_norm,
    quat_rotate,
    quat_step,
    quat_to_rotmat,
)

from .helpers import random_unit_quats

Z = np.array([0.0, 0.0, 1.0])


def test_quat_rotate_examples() -> None:
    np.testing.assert_allclose(quat_rotate(IDENTITY_QUAT, np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(
        quat_rotate(quat_from_axis_angle(Z, math.pi), np.array([1.0, 0.0, 0.0])), [-1.0, 0.0, 0.0], atol=1e-15
    )
    q90 = np.array([math.sqrt(2) / 2, 0.0, 0.0, math.sqrt(2) / 2])
    np.testing.assert_allclose(quat_rotate(q90, np.array([1.0, 0.0, 0.0])), [0.0, 1.0, 0.0], atol=1e-15)


def test_quat_rotate_is_isometry_and_matches_scipy(rng: np.random.Generator) -> None:
    q = random_unit_quats(rng, 200)
    v = rng.standard_normal((200, 3))
    out = quat_rotate(q, v)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.linalg.norm(v, axis=1), rtol=1e-12)
    expected = Rotation.from_quat(q[:, [1, 2, 3, 0]]).apply(v)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_rotation_matrix_columns_are_body_axes(rng: np.random.Generator) -> None:
    q = random_unit_quats(rng, 20)
    rot = quat_to_rotmat(q)
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = 1.0
        np.testing.assert_allclose(rot[:, :, axis], quat_rotate(q, np.broadcast_to(e, (20, 3))), atol=1e-12)


def test_quat_step_examples() -> None:
    np.testing.assert_allclose(quat_step(IDENTITY_QUAT, np.zeros(3), 0.01), IDENTITY_QUAT)
    half_turn = quat_step(IDENTITY_QUAT, np.array([0.0, 0.0, math.pi]), 1.0)
    np.testing.assert_allclose(half_turn, [0.0, 0.0, 0.0, 1.0], atol=1e-6)


def test_quat_step_keeps_unit_norm(rng: np.random.Generator) -> None:
    q = random_unit_quats(rng, 500)
    w = rng.uniform(-10, 10, (500, 3))
    out = quat_step(q, w, 0.05)
    np.testing.assert_allclose(quat_norm(out), 1.0, atol=1e-9)


def test_quat_step_matches_axis_angle_for_constant_rate() -> None:
    w = np.array([0.3, -1.2, 0.7])
    dt = 0.25
    q = IDENTITY_QUAT
    for _ in range(8):
        q = quat_step(q, w, dt)
    expected = quat_from_axis_angle(w, float(np.linalg.norm(w)) * dt * 8)
    assert quat_distance(q, expected) < 1e-12


def test_quat_distance_examples() -> None:
    q = quat_from_axis_angle(np.array([1.0, 2.0, 3.0]), 0.7)
    assert quat_distance(q, q) == pytest.approx(0.0, abs=1e-15)
    assert quat_distance(q, -q) == pytest.approx(0.0, abs=1e-15)
    assert quat_distance(IDENTITY_QUAT, quat_from_yaw(math.pi / 2)) == pytest.approx(0.5)


def test_quat_distance_is_bounded_and_symmetric(rng: np.random.Generator) -> None:
    a, b = random_unit_quats(rng, 300), random_unit_quats(rng, 300)
    d = quat_distance(a, b)
    assert np.all((d >= 0) & (d <= 1))
    np.testing.assert_array_equal(d, quat_distance(b, a))


def test_heading_angle_error_examples() -> None:
    angle, degenerate = heading_angle_error(IDENTITY_QUAT, np.array([1.0, 0.0, 0.0]))
    assert angle == 0.0 and not degenerate
    angle, _ = heading_angle_error(IDENTITY_QUAT, np.array([0.0, 1.0, 0.0]))
    assert angle == pytest.approx(math.pi / 2)
    angle, _ = heading_angle_error(IDENTITY_QUAT, np.array([-1.0, 1e-12, 0.0]))
    assert angle == pytest.approx(math.pi)
    angle, _ = heading_angle_error(IDENTITY_QUAT, np.array([-1.0, 0.0, 0.0]))
    assert angle == pytest.approx(math.pi)


def test_heading_angle_error_of_own_heading_is_zero(rng: np.random.Generator) -> None:
    q = random_unit_quats(rng, 100)
    h, _ = heading_of(q)
    angle, _ = heading_angle_error(q, h)
    np.testing.assert_allclose(angle, 0.0, atol=1e-12)


def test_vertical_body_axis_is_degenerate() -> None:
    pitched = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), -math.pi / 2)
    angle, degenerate = heading_angle_error(pitched, np.array([1.0, 0.0, 0.0]))
    assert degenerate and angle == 0.0


def test_state_and_command_pack_round_trip() -> None:
    state = State(np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]), quat_from_yaw(0.4), np.array([0.0, 0.5, 0.0]))
    x = state.to_array()
    assert x.shape == (13,)
    np.testing.assert_array_equal(State.from_array(x).to_array(), x)
    u = Command(11.0, np.array([0.1, -0.2, 0.3]))
    np.testing.assert_array_equal(Command.from_array(u.to_array()).to_array(), [11.0, 0.1, -0.2, 0.3])
    assert not State(np.array([np.nan, 0, 0]), np.zeros(3), IDENTITY_QUAT, np.zeros(3)).is_finite()


def test_vehicle_hover_thrust(params) -> None:
    assert params.hover_thrust == pytest.approx(11.8701)


def test_pose_rotation_turns_body_x_to_the_heading() -> None:
    pose = Pose(np.zeros(3), quat_from_yaw(0.5 * math.pi))
    np.testing.assert_allclose(pose.rotation() @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)
    np.testing.assert_array_equal(Pose(np.zeros(3), [1.0, 0.0, 0.0, 0.0]).rotation(), np.eye(3))
