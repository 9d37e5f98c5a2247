"""Obstacle constraints, barrier functions and the discrete barrier state (DBaS).

Unsafety is represented by ``math.inf`` rather than an exception so that an
unsafe sampled trajectory simply gets infinite cost (and zero MPPI weight).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .dynamics import (
    VehicleControl,
    VehicleParams,
    VehicleState,
    body_shape_offsets,
    shape_points_arrays,
    step_vehicle,
)

BarrierKind = Literal["inverse", "shifted-log"]


@dataclass(frozen=True)
class CircularObstacle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"obstacle radius must be > 0, got {self.radius!r}")


@dataclass(frozen=True)
class ConstraintSet:
    obstacles: tuple[CircularObstacle, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def __len__(self) -> int:
        return len(self.obstacles)

    @property
    def centers(self) -> np.ndarray:
        return np.array([o.center for o in self.obstacles], dtype=float).reshape(-1, 2)

    @property
    def radii(self) -> np.ndarray:
        return np.array([o.radius for o in self.obstacles], dtype=float)

    def margins(self, px, py) -> np.ndarray:
        """Margins of points ``(px, py)`` (shape ``S``) against every obstacle, shape ``S + (J,)``."""
        centers = self.centers
        dx = np.asarray(px)[..., None] - centers[:, 0]
        dy = np.asarray(py)[..., None] - centers[:, 1]
        return dx * dx + dy * dy - self.radii**2


@dataclass(frozen=True)
class BarrierConfig:
    barrier_kind: BarrierKind = "inverse"
    gamma_bas: float = 0.5
    beta_desired: float = 0.0
    epsilon_h: float = 1e-3

    def __post_init__(self):
        if self.barrier_kind not in ("inverse", "shifted-log"):
            raise ValueError(f"unknown barrier_kind {self.barrier_kind!r}")
        if not 0.0 <= self.gamma_bas < 1.0:
            raise ValueError(f"gamma_bas must lie in [0, 1), got {self.gamma_bas!r}")
        if not self.beta_desired >= 0.0:
            raise ValueError(f"beta_desired must be >= 0, got {self.beta_desired!r}")
        if not self.epsilon_h > 0.0:
            raise ValueError(f"epsilon_h must be > 0, got {self.epsilon_h!r}")


@dataclass(frozen=True)
class AugmentedState:
    """Vehicle state with the fused barrier state ``w`` appended."""

    nominal: VehicleState
    w: float = field(default=0.0)

    @property
    def is_safe(self) -> bool:
        return math.isfinite(self.w)


def constraint_margin(point, obstacle: CircularObstacle) -> float:
    """Squared distance to the obstacle center minus squared radius (positive is safe)."""
    dx = float(point[0]) - obstacle.center[0]
    dy = float(point[1]) - obstacle.center[1]
    return dx * dx + dy * dy - obstacle.radius**2


def pose_margins(state: VehicleState, params: VehicleParams, constraints: ConstraintSet) -> np.ndarray:
    """Margins of all 8 shape points against all J obstacles, shape (8, J)."""
    px, py = shape_points_arrays(state.x, state.y, state.theta, body_shape_offsets(params))
    return constraints.margins(px, py)


def min_margin(state: VehicleState, params: VehicleParams, constraints: ConstraintSet) -> float:
    if len(constraints) == 0:
        return math.inf
    return float(pose_margins(state, params, constraints).min())


def barrier_values(h, config: BarrierConfig) -> np.ndarray:
    """Vectorized barrier ``B(h)``.

    Below ``epsilon_h`` the curve continues along its tangent at ``epsilon_h``,
    and any ``h <= 0`` maps to ``inf``.
    """
    h = np.asarray(h, dtype=float)
    eps = config.epsilon_h
    safe_h = np.maximum(h, eps)
    if config.barrier_kind == "inverse":
        value = 1.0 / safe_h
        at_eps, slope = 1.0 / eps, -1.0 / eps**2
    else:
        value = np.log1p(1.0 / safe_h)
        at_eps, slope = math.log1p(1.0 / eps), -1.0 / (eps * (eps + 1.0))
    out = np.where(h >= eps, value, at_eps + slope * (h - eps))
    return np.where(h > 0.0, out, np.inf)


def barrier(h_value: float, config: BarrierConfig) -> float:
    return float(barrier_values(h_value, config))


def fused_barrier_from_margins(margins: np.ndarray, config: BarrierConfig) -> np.ndarray:
    """Sum of ``B(h)`` over the trailing (point, obstacle) axes."""
    if margins.shape[-1] == 0:
        return np.zeros(margins.shape[:-2])
    return barrier_values(margins, config).sum(axis=(-2, -1))


def fused_barrier(state: VehicleState, params: VehicleParams, constraints: ConstraintSet, config: BarrierConfig) -> float:
    """Multi-constraint barrier value ``sum_i B(h_i(state))`` over every shape point and obstacle."""
    return float(fused_barrier_from_margins(pose_margins(state, params, constraints), config))


def dbas_update(beta_k, fused_next, config: BarrierConfig):
    """Barrier-state recursion on precomputed fused barrier values (scalar or array)."""
    beta_k = np.asarray(beta_k, dtype=float)
    # gamma == 0 with an infinite beta_k gives 0 * inf = nan; the where() below overrides it
    with np.errstate(invalid="ignore"):
        out = fused_next - config.gamma_bas * (config.beta_desired - beta_k)
    return np.where(np.isinf(beta_k) | np.isinf(fused_next), np.inf, out)


def dbas_step(
    beta_k: float,
    next_state: VehicleState,
    params: VehicleParams,
    constraints: ConstraintSet,
    config: BarrierConfig,
) -> float:
    fused_next = fused_barrier(next_state, params, constraints, config)
    return float(dbas_update(beta_k, fused_next, config))


def initial_augmented(
    state: VehicleState, params: VehicleParams, constraints: ConstraintSet, config: BarrierConfig
) -> AugmentedState:
    """Embed ``state`` with its barrier value as the initial barrier state."""
    return AugmentedState(state, fused_barrier(state, params, constraints, config))


def augmented_step(
    state: AugmentedState,
    control: VehicleControl,
    params: VehicleParams,
    constraints: ConstraintSet,
    config: BarrierConfig,
) -> AugmentedState:
    nominal = step_vehicle(state.nominal, control, params)
    return AugmentedState(nominal, dbas_step(state.w, nominal, params, constraints, config))
