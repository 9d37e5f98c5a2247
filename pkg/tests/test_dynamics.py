from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mppi_dbas.dynamics import (
    DynamicsError,
    VehicleControl,
    VehicleParams,
    VehicleState,
    rollout,
    shape_points,
    step_vehicle,
)

finite = st.floats(-50, 50, allow_nan=False)
poses = st.tuples(finite, finite, st.floats(-10, 10), st.floats(-10, 10))
controls = st.tuples(st.floats(-0.5, 0.5), st.floats(-3, 3))


def test_straight_line_step():
    s = step_vehicle(VehicleState(0, 0, 0, 5), VehicleControl(0, 0), VehicleParams(dt=0.1))
    assert (s.x, s.y, s.theta, s.v) == pytest.approx((0.5, 0, 0, 5), abs=1e-15)


def test_axis_aligned_step():
    s = step_vehicle(VehicleState(0, 0, math.pi / 2, 2), VehicleControl(0, 1), VehicleParams(dt=0.1))
    assert s.x == pytest.approx(0, abs=1e-15)
    assert (s.y, s.theta, s.v) == pytest.approx((0.2, math.pi / 2, 2.1), rel=1e-15)


def test_steering_step_hand_value():
    s = step_vehicle(VehicleState(1, 1, 0, 4), VehicleControl(0.3, 0), VehicleParams(wheelbase=2.5, dt=0.05))
    assert s.x == pytest.approx(1.2, rel=1e-15)
    assert s.y == 1
    assert s.theta == pytest.approx(4 * math.tan(0.3) / 2.5 * 0.05, rel=1e-15)
    assert s.theta == pytest.approx(0.0247469, abs=5e-8)
    assert s.v == 4


def test_theta_not_wrapped():
    s = step_vehicle(VehicleState(0, 0, 3.1, 10), VehicleControl(0.5, 0), VehicleParams())
    assert s.theta > math.pi


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_state_rejected(bad):
    with pytest.raises(DynamicsError):
        step_vehicle(VehicleState(bad, 0, 0, 1), VehicleControl(0, 0), VehicleParams())


@pytest.mark.parametrize("field", ["wheelbase", "length", "width", "dt"])
def test_params_must_be_positive(field):
    with pytest.raises(ValueError):
        VehicleParams(**{field: 0.0})


def test_control_bounds():
    p = VehicleParams(steer_max=0.5, accel_max=3.0)
    clipped = p.clip_controls(np.array([[1.0, -9.0], [-0.2, 2.0]]))
    np.testing.assert_array_equal(clipped, [[0.5, -3.0], [-0.2, 2.0]])
    assert p.within_bounds(VehicleControl(0.5, -3.0))
    assert not p.within_bounds(VehicleControl(0.51, 0.0))


def test_shape_points_at_origin():
    pts = shape_points(VehicleState(0, 0, 0, 0), VehicleParams(length=4, width=3))
    expected = {(2, 1.5), (-2, 1.5), (-2, -1.5), (2, -1.5), (2, 0), (-2, 0), (0, 1.5), (0, -1.5)}
    assert pts.shape == (8, 2)
    assert {tuple(np.round(p, 12) + 0.0) for p in pts} == expected


def test_shape_points_translate():
    p = VehicleParams()
    a = shape_points(VehicleState(0, 0, 0.3, 0), p)
    b = shape_points(VehicleState(5, 0, 0.3, 0), p)
    np.testing.assert_allclose(b - a, np.tile([5.0, 0.0], (8, 1)), atol=1e-12)


def test_shape_points_half_turn_symmetry():
    p = VehicleParams()
    a = {tuple(np.round(q, 9) + 0.0) for q in shape_points(VehicleState(0, 0, 0, 0), p)}
    b = {tuple(np.round(q, 9) + 0.0) for q in shape_points(VehicleState(0, 0, math.pi, 0), p)}
    assert a == b


@given(poses, poses)
def test_shape_points_rigid(pose_a, pose_b):
    p = VehicleParams()

    def dists(pose):
        pts = shape_points(VehicleState(*pose), p)
        return np.array([np.linalg.norm(pts[i] - pts[j]) for i, j in itertools.combinations(range(8), 2)])

    da, db = dists(pose_a), dists(pose_b)
    assert len(da) == 28
    np.testing.assert_allclose(da, db, atol=1e-9)


def test_rollout_empty_horizon():
    s0 = VehicleState(1, 2, 3, 4)
    assert rollout(s0, [], VehicleParams()) == [s0]


def test_rollout_straight_line():
    traj = rollout(VehicleState(0, 0, 0, 5), [VehicleControl(0, 0)] * 2, VehicleParams(dt=0.1))
    assert [s.x for s in traj] == pytest.approx([0, 0.5, 1.0], abs=1e-15)


@given(poses, st.lists(controls, min_size=1, max_size=15))
def test_rollout_is_stepwise(pose, us):
    p = VehicleParams()
    seq = [VehicleControl(*u) for u in us]
    traj = rollout(VehicleState(*pose), seq, p)
    assert len(traj) == len(seq) + 1
    for k, u in enumerate(seq):
        assert traj[k + 1] == step_vehicle(traj[k], u, p)


@pytest.mark.filterwarnings("ignore:overflow")
def test_rollout_reports_step_index():
    with pytest.raises(DynamicsError, match="step 1"):
        rollout(VehicleState(0, 0, 0, 1e308), [VehicleControl(0, 0), VehicleControl(0, 1e308)] * 2, VehicleParams(dt=10.0))


@given(poses, st.floats(-3, 3), st.integers(0, 40))
def test_zero_steer_closed_forms(pose, accel, n):
    p = VehicleParams()
    s0 = VehicleState(*pose)
    traj = rollout(s0, [VehicleControl(0.0, accel)] * n, p)
    assert all(s.theta == s0.theta for s in traj)
    expected = s0.v + n * accel * p.dt
    assert traj[-1].v == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_determinism_bitwise():
    p = VehicleParams()
    seq = [VehicleControl(0.1 * math.sin(k), math.cos(k)) for k in range(50)]
    assert rollout(VehicleState(0, 0, 0, 3), seq, p) == rollout(VehicleState(0, 0, 0, 3), seq, p)
