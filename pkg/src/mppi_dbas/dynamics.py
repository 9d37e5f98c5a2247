"""Discrete-time Ackermann vehicle model and its collision shape points."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DynamicsError(ValueError):
    """Raised when a state or control fed to the model is not finite."""


@dataclass(frozen=True)
class VehicleState:
    x: float  # position east (m)
    y: float  # position north (m)
    theta: float  # yaw (rad), unwrapped
    v: float  # longitudinal speed (m/s)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        x, y, theta, v = (float(a) for a in arr)
        return cls(x, y, theta, v)

    def is_finite(self) -> bool:
        return all(math.isfinite(f) for f in (self.x, self.y, self.theta, self.v))


@dataclass(frozen=True)
class VehicleControl:
    steer: float  # steering angle (rad)
    accel: float  # longitudinal acceleration (m/s^2)

    def as_array(self) -> np.ndarray:
        return np.array([self.steer, self.accel], dtype=float)


@dataclass(frozen=True)
class VehicleParams:
    """Geometry, timestep and actuator limits of the vehicle.

    The defaults for ``wheelbase``, ``dt`` and the control bounds are
    assumptions for a 4 m x 3 m car; they are configuration, not ground truth.
    """

    wheelbase: float = 2.5
    length: float = 4.0
    width: float = 3.0
    dt: float = 0.1
    steer_max: float = 0.5
    accel_max: float = 3.0

    def __post_init__(self):
        for name in ("wheelbase", "length", "width", "dt", "steer_max", "accel_max"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"VehicleParams.{name} must be finite and > 0, got {value!r}")

    @property
    def control_low(self) -> np.ndarray:
        return np.array([-self.steer_max, -self.accel_max])

    @property
    def control_high(self) -> np.ndarray:
        return np.array([self.steer_max, self.accel_max])

    def clip_controls(self, controls: np.ndarray) -> np.ndarray:
        """Saturate an array whose last axis is (steer, accel) to the box bounds."""
        return np.clip(controls, self.control_low, self.control_high)

    def within_bounds(self, control: VehicleControl) -> bool:
        return abs(control.steer) <= self.steer_max and abs(control.accel) <= self.accel_max


def step_arrays(x, y, theta, v, steer, accel, wheelbase: float, dt: float):
    """Forward-Euler Ackermann update; works elementwise on scalars or arrays."""
    return (
        x + v * np.cos(theta) * dt,
        y + v * np.sin(theta) * dt,
        theta + v * np.tan(steer) / wheelbase * dt,
        v + accel * dt,
    )


def step_vehicle(state: VehicleState, control: VehicleControl, params: VehicleParams) -> VehicleState:
    if not state.is_finite():
        raise DynamicsError(f"non-finite vehicle state {state}")
    if not (math.isfinite(control.steer) and math.isfinite(control.accel)):
        raise DynamicsError(f"non-finite control {control}")
    nx, ny, nth, nv = step_arrays(
        state.x, state.y, state.theta, state.v, control.steer, control.accel, params.wheelbase, params.dt
    )
    return VehicleState(float(nx), float(ny), float(nth), float(nv))


def rollout(
    initial: VehicleState, controls: Sequence[VehicleControl], params: VehicleParams
) -> list[VehicleState]:
    """Iterate :func:`step_vehicle` over ``controls``; returns ``len(controls) + 1`` states."""
    states = [initial]
    for k, control in enumerate(controls):
        try:
            states.append(step_vehicle(states[-1], control, params))
        except DynamicsError as exc:
            raise DynamicsError(f"rollout failed at step {k}: {exc}") from exc
    return states


def body_shape_offsets(params: VehicleParams) -> np.ndarray:
    """Eight body-frame points: four corners and four side midpoints, shape (8, 2).

    Ordered counter-clockwise starting at the front-right corner.
    """
    hl, hw = params.length / 2.0, params.width / 2.0
    return np.array(
        [
            [hl, -hw],
            [hl, 0.0],
            [hl, hw],
            [0.0, hw],
            [-hl, hw],
            [-hl, 0.0],
            [-hl, -hw],
            [0.0, -hw],
        ]
    )


def shape_points_arrays(x, y, theta, offsets: np.ndarray):
    """World-frame shape points for (batched) poses.

    ``x``, ``y``, ``theta`` may be arrays of any common shape ``S``; returns
    ``(px, py)`` each of shape ``S + (8,)``.
    """
    x = np.asarray(x)[..., None]
    y = np.asarray(y)[..., None]
    theta = np.asarray(theta)[..., None]
    c, s = np.cos(theta), np.sin(theta)
    ox, oy = offsets[:, 0], offsets[:, 1]
    return x + c * ox - s * oy, y + s * ox + c * oy


def shape_points(state: VehicleState, params: VehicleParams) -> np.ndarray:
    """World-frame collision points of the vehicle body at ``state``, shape (8, 2)."""
    px, py = shape_points_arrays(state.x, state.y, state.theta, body_shape_offsets(params))
    return np.stack([px, py], axis=-1)
