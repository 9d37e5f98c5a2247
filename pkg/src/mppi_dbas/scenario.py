"""Reference path, tracking costs, the obstacle-gauntlet scenario and run outcomes."""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import VehicleParams, VehicleState
from .safety import BarrierConfig, ConstraintSet


@dataclass(frozen=True, eq=False)
class ReferencePath:
    """Polyline of samples carrying position, heading, speed and arc length.

    ``arclength`` is the true arc length of the underlying curve at each
    sample, so it is exact even where the polyline cuts a chord.
    """

    points: np.ndarray  # (P, 2)
    headings: np.ndarray  # (P,), unwrapped
    speeds: np.ndarray  # (P,)
    arclength: np.ndarray  # (P,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        for name in ("headings", "speeds", "arclength"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(pts)
        if pts.ndim != 2 or pts.shape[1] != 2 or n < 2:
            raise ValueError("a reference path needs at least two planar points")
        if not (len(self.headings) == len(self.speeds) == len(self.arclength) == n):
            raise ValueError("reference path arrays must have equal length")
        if np.any(np.diff(self.arclength) <= 0):
            raise ValueError("reference path arc length must be strictly increasing")
        if np.any(self.speeds < 0):
            raise ValueError("reference speeds must be >= 0")

    def __len__(self) -> int:
        return len(self.points)

    @functools.cached_property
    def segment_table(self) -> np.ndarray:
        """Rows: segment start x, start y, dx, dy, squared length; shape (5, P-1)."""
        a = self.points[:-1]
        e = self.points[1:] - a
        return np.ascontiguousarray(np.vstack([a.T, e.T, (e**2).sum(axis=1)]))

    @functools.cached_property
    def reference_table(self) -> np.ndarray:
        """Rows: heading and speed per sample; shape (2, P)."""
        return np.ascontiguousarray(np.vstack([self.headings, self.speeds]))

    @property
    def total_length(self) -> float:
        return float(self.arclength[-1] - self.arclength[0])

    def project(self, px, py, lo: int = 0, hi: int | None = None):
        """Nearest point on the polyline for query points of any shape ``S``.

        Only segments ``lo .. hi-1`` are scanned. Returns ``(distance,
        heading, speed, arclength, segment_index)``, each of shape ``S``,
        with heading/speed/arclength interpolated along the nearest segment.
        """
        hi = len(self.points) - 1 if hi is None else min(hi, len(self.points) - 1)
        lo = max(0, min(lo, hi - 1))
        a = self.points[lo:hi]
        e = self.points[lo + 1 : hi + 1] - a
        seg_len2 = np.einsum("ij,ij->i", e, e)
        px = np.asarray(px, dtype=float)[..., None]
        py = np.asarray(py, dtype=float)[..., None]
        rx = px - a[:, 0]
        ry = py - a[:, 1]
        t = np.clip((rx * e[:, 0] + ry * e[:, 1]) / seg_len2, 0.0, 1.0)
        dx = rx - t * e[:, 0]
        dy = ry - t * e[:, 1]
        d2 = dx * dx + dy * dy
        j = np.argmin(d2, axis=-1)
        d2_min = np.take_along_axis(d2, j[..., None], axis=-1)[..., 0]
        t_min = np.take_along_axis(t, j[..., None], axis=-1)[..., 0]
        idx = j + lo

        def interp(arr):
            return arr[idx] + t_min * (arr[idx + 1] - arr[idx])

        return np.sqrt(d2_min), interp(self.headings), interp(self.speeds), interp(self.arclength), idx

    def project_near(self, px, py, hint, half_width: int = 3):
        """Like :meth:`project`, but each query scans only the ``2 * half_width + 1``
        segments centred on its own ``hint`` segment index."""
        nseg = len(self.points) - 1
        offsets = np.arange(-half_width, half_width + 1)
        seg = np.clip(np.asarray(hint)[..., None] + offsets, 0, nseg - 1)
        a = self.points[seg]
        e = self.points[seg + 1] - a
        seg_len2 = e[..., 0] ** 2 + e[..., 1] ** 2
        rx = np.asarray(px, dtype=float)[..., None] - a[..., 0]
        ry = np.asarray(py, dtype=float)[..., None] - a[..., 1]
        t = np.clip((rx * e[..., 0] + ry * e[..., 1]) / seg_len2, 0.0, 1.0)
        dx = rx - t * e[..., 0]
        dy = ry - t * e[..., 1]
        d2 = dx * dx + dy * dy
        j = np.argmin(d2, axis=-1)[..., None]
        d2_min = np.take_along_axis(d2, j, axis=-1)[..., 0]
        t_min = np.take_along_axis(t, j, axis=-1)[..., 0]
        idx = np.take_along_axis(seg, j, axis=-1)[..., 0]

        def interp(arr):
            return arr[idx] + t_min * (arr[idx + 1] - arr[idx])

        return np.sqrt(d2_min), interp(self.headings), interp(self.speeds), interp(self.arclength), idx


def build_line_semicircle_path(line_length: float, radius: float, ref_speed: float, spacing: float) -> ReferencePath:
    """Straight segment heading east from the origin, then a left-turning semicircle.

    Both pieces are sampled uniformly with step at most ``spacing``.
    """
    for name, value in (("line_length", line_length), ("radius", radius), ("ref_speed", ref_speed), ("spacing", spacing)):
        if not value > 0:
            raise ValueError(f"{name} must be > 0, got {value!r}")
    n_line = math.ceil(line_length / spacing - 1e-9)
    s_line = np.linspace(0.0, line_length, n_line + 1)
    arc_len = math.pi * radius
    n_arc = math.ceil(arc_len / spacing - 1e-9)
    s_arc = np.linspace(0.0, arc_len, n_arc + 1)[1:]
    ang = -math.pi / 2 + s_arc / radius
    line_pts = np.stack([s_line, np.zeros_like(s_line)], axis=-1)
    arc_pts = np.stack([line_length + radius * np.cos(ang), radius + radius * np.sin(ang)], axis=-1)
    points = np.vstack([line_pts, arc_pts])
    headings = np.concatenate([np.zeros_like(s_line), s_arc / radius])
    arclength = np.concatenate([s_line, line_length + s_arc])
    return ReferencePath(points, headings, np.full(len(points), float(ref_speed)), arclength)


def wrap_angle(angle):
    """Wrap to the half-open interval (-pi, pi]."""
    return angle - 2.0 * np.pi * np.ceil((angle - np.pi) / (2.0 * np.pi))


@dataclass(frozen=True)
class CostParams:
    q_pos: float = 1.0
    q_heading: float = 1.0
    q_speed: float = 1.0
    terminal_q_pos: float = 1.0
    terminal_q_heading: float = 1.0
    terminal_q_speed: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"CostParams.{name} must be finite and >= 0, got {value!r}")


def tracking_cost_terms(dist, ref_heading, ref_speed, theta, v, q_pos, q_heading, q_speed):
    """Weighted squared lateral, heading and speed errors against a projected reference."""
    herr = wrap_angle(np.asarray(theta) - ref_heading)
    return q_pos * dist**2 + q_heading * herr**2 + q_speed * (np.asarray(v) - ref_speed) ** 2


def tracking_cost_arrays(x, y, theta, v, path: ReferencePath, q_pos, q_heading, q_speed):
    """Tracking cost elementwise over (arrays of) states, using a full nearest-point scan."""
    dist, heading, speed, _, _ = path.project(x, y)
    return tracking_cost_terms(dist, heading, speed, theta, v, q_pos, q_heading, q_speed)


def running_cost(state: VehicleState, path: ReferencePath, params: CostParams) -> float:
    return float(
        tracking_cost_arrays(state.x, state.y, state.theta, state.v, path, params.q_pos, params.q_heading, params.q_speed)
    )


def terminal_cost(state: VehicleState, path: ReferencePath, params: CostParams) -> float:
    return float(
        tracking_cost_arrays(
            state.x,
            state.y,
            state.theta,
            state.v,
            path,
            params.terminal_q_pos,
            params.terminal_q_heading,
            params.terminal_q_speed,
        )
    )


class OutcomeClass(str, enum.Enum):
    SUCCESS = "Success"
    FAIL_STOP = "FailStop"
    FAIL_COLLISION = "FailCollision"


@dataclass(frozen=True)
class StopLimits:
    v_stall: float = 0.3  # m/s
    t_stall: float = 3.0  # s
    max_steps: int = 600
    goal_tolerance: float = 1.0  # m of arc length short of the path end

    def stall_steps(self, dt: float) -> int:
        return max(1, round(self.t_stall / dt))


@dataclass(frozen=True)
class Outcome:
    outcome_class: OutcomeClass
    steps: int
    avg_speed: float
    avg_position_error: float
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "class": self.outcome_class.value,
            "steps": self.steps,
            "avg_speed": self.avg_speed,
            "avg_position_error": self.avg_position_error,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Outcome":
        return cls(OutcomeClass(d["class"]), int(d["steps"]), float(d["avg_speed"]), float(d["avg_position_error"]), d.get("reason", ""))


class ProgressTracker:
    """Monotone arc-length progress along a path, fed one position at a time.

    Each query only scans segments near the previous nearest segment, which
    keeps progress from jumping across the path where it nearly meets itself.
    """

    def __init__(self, path: ReferencePath, window: int = 20):
        self.path = path
        self.window = window
        self.segment = 0
        self.progress = -math.inf

    def update(self, x: float, y: float) -> tuple[float, float]:
        """Record a position; returns ``(distance_to_path, progress)``."""
        d, _, _, s, idx = self.path.project(x, y, self.segment - self.window, self.segment + self.window + 1)
        self.segment = int(idx)
        self.progress = max(self.progress, float(s))
        return float(d), self.progress

    def reached_end(self, tolerance: float) -> bool:
        return self.progress >= self.path.arclength[-1] - tolerance


def path_progress(states_xy: np.ndarray, path: ReferencePath) -> tuple[np.ndarray, np.ndarray]:
    """Distance to the path and running progress for every point of a trajectory."""
    tracker = ProgressTracker(path)
    out = np.array([tracker.update(x, y) for x, y in states_xy]).reshape(-1, 2)
    return out[:, 0], out[:, 1]


def stalled(speeds: Sequence[float], limits: StopLimits, dt: float) -> bool:
    need = limits.stall_steps(dt)
    run = 0
    for v in speeds:
        run = run + 1 if v < limits.v_stall else 0
        if run >= need:
            return True
    return False


def classify_outcome(
    states: Sequence[VehicleState],
    margins: Sequence[float],
    path: ReferencePath,
    limits: StopLimits,
    dt: float,
) -> Outcome:
    """Classify an executed run; precedence is collision, then stop, then success.

    ``states`` holds every executed state including the initial one and
    ``margins`` the matching minimum obstacle margins.
    """
    if len(states) == 0:
        raise ValueError("cannot classify an empty run")
    xy = np.array([[s.x, s.y] for s in states])
    speeds = np.array([s.v for s in states])
    dists, progress = path_progress(xy, path)
    steps = len(states) - 1
    avg_speed = float(speeds.mean())
    avg_err = float(dists.mean())

    def outcome(cls, reason):
        return Outcome(cls, steps, avg_speed, avg_err, reason)

    bad = [k for k, m in enumerate(margins) if m < 0]
    if bad:
        return outcome(OutcomeClass.FAIL_COLLISION, f"obstacle contact at step {bad[0]}")
    if stalled(speeds, limits, dt):
        return outcome(OutcomeClass.FAIL_STOP, "speed stayed below the stall threshold")
    if not progress[-1] >= path.arclength[-1] - limits.goal_tolerance:
        return outcome(OutcomeClass.FAIL_STOP, "path end not reached within the step budget")
    return outcome(OutcomeClass.SUCCESS, "path end reached")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything a closed-loop run needs besides the controller settings."""

    path: ReferencePath
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    costs: CostParams = field(default_factory=CostParams)
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    limits: StopLimits = field(default_factory=StopLimits)
    initial_state: VehicleState = VehicleState(0.0, 0.0, 0.0, 0.0)
