"""MPPI with discrete barrier states and an adaptive exploration rate.

One call to :func:`control_step` is one pass of the receding-horizon loop:
sample perturbations, roll out the barrier-embedded model, score, take the
exponentially weighted average, smooth it, re-roll the optimized sequence to
update the exploration rate, and shift for the warm start.

Three modes are supported:

``dbas-adaptive``
    Barrier-state cost plus exploration rate ``mu * ln(e + C_B*)``.
``dbas-fixed``
    Barrier-state cost, exploration rate held at 1.
``baseline-indicator``
    Standard MPPI: a constant penalty for any predicted collision, no
    barrier cost, exploration rate held at 1.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.signal import savgol_filter
from scipy.special import ndtri

from . import _kernels
from .dynamics import VehicleControl, VehicleParams, body_shape_offsets, shape_points_arrays, step_arrays
from .safety import AugmentedState, BarrierConfig, ConstraintSet, dbas_update, fused_barrier_from_margins
from .scenario import CostParams, ReferencePath, Scenario, tracking_cost_terms

log = logging.getLogger(__name__)

Mode = Literal["dbas-adaptive", "dbas-fixed", "baseline-indicator"]
MODES: tuple[str, ...] = ("dbas-adaptive", "dbas-fixed", "baseline-indicator")


class NoSafeSampleError(RuntimeError):
    """Every sampled trajectory violated a constraint, so no weighted update exists."""


@dataclass(frozen=True)
class ControllerConfig:
    num_samples: int = 512
    horizon: int = 30
    sigma_u: tuple[tuple[float, ...], ...] = ((0.075, 0.0), (0.0, 2.0))
    lam: float = 1.0  # inverse temperature
    gamma_ctrl: float = 2.0
    r_barrier: float = 1.0
    mu: float = 0.4
    mode: Mode = "dbas-adaptive"
    indicator_penalty: float = 1e4
    sg_window: int = 9
    sg_order: int = 3
    rng_seed: int = 0
    s_e_max: float = 5.0
    n_workers: int = 1

    def __post_init__(self):
        sigma = np.asarray(self.sigma_u, dtype=float)
        object.__setattr__(self, "sigma_u", tuple(tuple(float(v) for v in row) for row in sigma))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.num_samples < 1 or self.horizon < 1:
            raise ValueError("num_samples and horizon must be >= 1")
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("sigma_u must be a square matrix")
        if not np.allclose(sigma, sigma.T):
            raise ValueError("sigma_u must be symmetric")
        if np.any(np.linalg.eigvalsh(sigma) <= 0):
            raise ValueError("sigma_u must be positive definite")
        if not self.lam > 0:
            raise ValueError(f"lam must be > 0, got {self.lam!r}")
        if not 0 < self.mu < 1:
            raise ValueError(f"mu must lie in (0, 1), got {self.mu!r}")
        if self.gamma_ctrl < 0 or self.r_barrier < 0 or self.indicator_penalty < 0:
            raise ValueError("gamma_ctrl, r_barrier and indicator_penalty must be >= 0")
        if self.sg_window % 2 != 1 or self.sg_window <= self.sg_order or self.sg_order < 0:
            raise ValueError("sg_window must be odd and greater than sg_order >= 0")
        if not self.s_e_max >= 1.0:
            raise ValueError("s_e_max must be >= 1 so the fixed-rate modes stay within the cap")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be >= 0")
        if self.n_workers < 1:
            raise ValueError("n_workers must be >= 1")

    @property
    def sigma(self) -> np.ndarray:
        return np.asarray(self.sigma_u, dtype=float)

    @property
    def control_dim(self) -> int:
        return len(self.sigma_u)

    @property
    def adaptive(self) -> bool:
        return self.mode == "dbas-adaptive"

    @property
    def uses_barrier(self) -> bool:
        return self.mode != "baseline-indicator"


@dataclass(frozen=True)
class ExplorationState:
    s_e: float
    c_b_star: float = 0.0

    @classmethod
    def initial(cls, config: ControllerConfig) -> "ExplorationState":
        return cls(config.mu if config.adaptive else 1.0, 0.0)


@dataclass
class RolloutBatch:
    perturbations: np.ndarray  # (M, N, m), already saturated: controls - nominal
    controls: np.ndarray  # (M, N, m)
    states: np.ndarray  # (M, N+1, 4)
    w: np.ndarray  # (M, N+1)
    margins: np.ndarray  # (M, N+1), minimum over shape points and obstacles
    costs: np.ndarray  # (M,)

    @property
    def rho(self) -> float:
        return float(self.costs.min())


@dataclass
class StepDiagnostics:
    rho: float
    effective_sample_size: float
    s_e: float  # rate after this step's update, i.e. used for the next sampling
    s_e_used: float
    c_b_star: float
    min_margin: float
    num_safe: int
    no_safe_sample: bool = False


@dataclass
class StepResult:
    control: VehicleControl
    nominal: np.ndarray
    exploration: ExplorationState
    diagnostics: StepDiagnostics
    optimized: np.ndarray = field(repr=False, default=None)


def _block_words(draws_per_sample: int) -> int:
    # Philox emits four 64-bit words per counter increment
    return 4 * math.ceil(draws_per_sample / 4)


def _standard_normals(seed: int, step_index: int, start: int, count: int, draws: int) -> np.ndarray:
    """Standard normals for samples ``start .. start+count-1``, shape ``(count, draws)``.

    Sample ``i`` owns a fixed block of the Philox counter space under key
    ``seed`` and counter word ``step_index``; uniforms are mapped through the
    inverse normal CDF so every draw consumes exactly one word.
    """
    words = _block_words(draws)
    bit_gen = np.random.Philox(key=seed, counter=[0, 0, step_index, 0])
    bit_gen.advance(start * words // 4)
    raw = bit_gen.random_raw(count * words).reshape(count, words)[:, :draws]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def sample_perturbations(
    config: ControllerConfig, exploration: ExplorationState, step_index: int, sample_indices=None
) -> np.ndarray:
    """Gaussian perturbations with covariance ``s_e * sigma_u``, shape ``(len(sample_indices), N, m)``.

    Draws for sample ``i`` depend only on ``(rng_seed, step_index, i)``, so
    they do not change with how samples are split across workers or the
    order in which they are produced.
    """
    n, m = config.horizon, config.control_dim
    if sample_indices is None:
        sample_indices = np.arange(config.num_samples)
    sample_indices = np.asarray(sample_indices, dtype=np.int64)
    z = np.empty((len(sample_indices), n * m))
    # contiguous runs share one generator
    breaks = np.flatnonzero(np.diff(sample_indices) != 1) + 1
    row = 0
    for run in np.split(sample_indices, breaks):
        if len(run):
            z[row : row + len(run)] = _standard_normals(config.rng_seed, step_index, int(run[0]), len(run), n * m)
            row += len(run)
    z = z.reshape(-1, n, m)
    chol = np.linalg.cholesky(config.sigma) * math.sqrt(exploration.s_e)
    # explicit lower-triangular product: elementwise, so chunking cannot change rounding
    out = np.zeros_like(z)
    for i in range(m):
        for j in range(i + 1):
            out[..., i] += chol[i, j] * z[..., j]
    return out


def rollout_batch(
    initial: AugmentedState,
    controls: np.ndarray,
    vehicle: VehicleParams,
    constraints: ConstraintSet,
    barrier: BarrierConfig,
):
    """Roll the barrier-embedded model forward for a batch of control sequences.

    ``controls`` has shape ``(B, N, 2)``. Returns ``(states, w, margins)`` with
    shapes ``(B, N+1, 4)``, ``(B, N+1)`` and ``(B, N+1)``.
    """
    b, n, _ = controls.shape
    offsets = body_shape_offsets(vehicle)
    states = np.empty((b, n + 1, 4))
    w = np.empty((b, n + 1))
    margins = np.empty((b, n + 1))
    s0 = initial.nominal
    states[:, 0] = (s0.x, s0.y, s0.theta, s0.v)
    w[:, 0] = initial.w
    margins[:, 0] = _pose_min_margin(s0.x, s0.y, s0.theta, offsets, constraints)
    x = np.full(b, s0.x)
    y = np.full(b, s0.y)
    th = np.full(b, s0.theta)
    v = np.full(b, s0.v)
    for k in range(n):
        x, y, th, v = step_arrays(x, y, th, v, controls[:, k, 0], controls[:, k, 1], vehicle.wheelbase, vehicle.dt)
        states[:, k + 1, 0] = x
        states[:, k + 1, 1] = y
        states[:, k + 1, 2] = th
        states[:, k + 1, 3] = v
        if len(constraints):
            px, py = shape_points_arrays(x, y, th, offsets)
            h = constraints.margins(px, py)
            margins[:, k + 1] = h.min(axis=(-2, -1))
            fused = fused_barrier_from_margins(h, barrier)
        else:
            margins[:, k + 1] = np.inf
            fused = np.zeros(b)
        w[:, k + 1] = dbas_update(w[:, k], fused, barrier)
    return states, w, margins


def _pose_min_margin(x, y, theta, offsets, constraints: ConstraintSet) -> float:
    if not len(constraints):
        return math.inf
    px, py = shape_points_arrays(x, y, theta, offsets)
    return float(constraints.margins(px, py).min())


def control_cost(nominal: np.ndarray, controls: np.ndarray, config: ControllerConfig, s_e: float) -> np.ndarray:
    """``gamma * sum_k u_k^T (s_e Sigma)^-1 v_k`` over the horizon (last two axes)."""
    inv = np.linalg.inv(config.sigma * s_e)
    m = config.control_dim
    # explicit contraction keeps per-sample rounding independent of batch size
    total = np.zeros(controls.shape[:-2])
    for k in range(controls.shape[-2]):
        for i in range(m):
            a = sum(nominal[..., k, j] * inv[j, i] for j in range(m))
            total = total + a * controls[..., k, i]
    return config.gamma_ctrl * total


def barrier_state_cost(w: np.ndarray, r_barrier: float) -> np.ndarray:
    """``C_B = sum_k R_B w_k`` over the last axis, accumulated in step order."""
    total = np.zeros(w.shape[:-1])
    for k in range(w.shape[-1]):
        total = total + r_barrier * w[..., k]
    return total


def barrier_cost(w: np.ndarray, margins: np.ndarray, config: ControllerConfig) -> np.ndarray:
    """Safety part of the cost: ``sum_k R_B w_k``, or the collision indicator in baseline mode."""
    if config.uses_barrier:
        return barrier_state_cost(w, config.r_barrier)
    return config.indicator_penalty * np.any(margins < 0, axis=-1).astype(float)


def state_costs(states: np.ndarray, path: ReferencePath, costs: CostParams, half_width: int = 3) -> np.ndarray:
    """Running cost over ``x_0..x_{N-1}`` plus terminal cost at ``x_N``.

    Nearest path points are tracked along each trajectory: step ``k`` only
    scans segments within ``half_width`` of the segment found at ``k-1``.
    """
    n = states.shape[-2] - 1
    total = np.zeros(states.shape[:-2])
    s = states[..., 0, :]
    _, _, _, _, hint = path.project(s[..., 0], s[..., 1])
    for k in range(n + 1):
        s = states[..., k, :]
        dist, heading, speed, _, hint = path.project_near(s[..., 0], s[..., 1], hint, half_width)
        if k < n:
            weights = (costs.q_pos, costs.q_heading, costs.q_speed)
        else:
            weights = (costs.terminal_q_pos, costs.terminal_q_heading, costs.terminal_q_speed)
        total = total + tracking_cost_terms(dist, heading, speed, s[..., 2], s[..., 3], *weights)
    return total


def trajectory_cost(
    states: np.ndarray,
    w: np.ndarray,
    margins: np.ndarray,
    controls: np.ndarray,
    nominal: np.ndarray,
    config: ControllerConfig,
    path: ReferencePath,
    costs: CostParams,
    s_e: float = 1.0,
    half_width: int = 3,
):
    """Cost-to-go of one trajectory (or a batch, via leading axes).

    ``states`` is ``(..., N+1, 4)``, ``w`` and ``margins`` are ``(..., N+1)``,
    ``controls`` (the perturbed inputs) and ``nominal`` are ``(..., N, m)``.
    An infinite barrier state anywhere makes the whole cost infinite.
    """
    total = (
        barrier_cost(w, margins, config)
        + state_costs(states, path, costs, half_width)
        + control_cost(nominal, controls, config, s_e)
    )
    if config.uses_barrier:
        total = np.where(np.all(np.isfinite(w), axis=-1), total, np.inf)
    return total


def importance_weights(costs: np.ndarray, lam: float) -> np.ndarray:
    """Normalized ``exp(-(S - rho) / lam)``; infinite costs get weight exactly 0."""
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not finite.any():
        raise NoSafeSampleError("no sampled trajectory has finite cost")
    rho = costs[finite].min()
    weights = np.zeros_like(costs)
    weights[finite] = np.exp(-(costs[finite] - rho) / lam)
    return weights / weights.sum()


def weighted_average(perturbations: np.ndarray, costs: np.ndarray, lam: float) -> np.ndarray:
    """Per-timestep weighted mean of the perturbations, shape ``(N, m)``."""
    weights = importance_weights(costs, lam)
    return np.tensordot(weights, perturbations, axes=(0, 0))


def smooth_controls(raw_update: np.ndarray, config: ControllerConfig) -> np.ndarray:
    """Savitzky-Golay smoothing along the horizon, channel by channel.

    The first and last half-windows take their values from the least-squares
    polynomial fitted to the edge window, so any polynomial sequence of
    degree up to ``sg_order`` passes through unchanged.
    """
    n = raw_update.shape[0]
    if config.sg_window == 1:
        return raw_update.copy()
    if config.sg_window > n:
        log.debug("sg_window %d exceeds horizon %d; smoothing skipped", config.sg_window, n)
        return raw_update.copy()
    return savgol_filter(raw_update, config.sg_window, config.sg_order, axis=0, mode="interp")


def weighted_update(nominal: np.ndarray, batch: RolloutBatch, config: ControllerConfig, vehicle: VehicleParams | None = None):
    """Exponentially weighted, smoothed update of the nominal sequence.

    Raises :class:`NoSafeSampleError` when every cost is infinite.
    """
    raw = weighted_average(batch.perturbations, batch.costs, config.lam)
    updated = nominal + smooth_controls(raw, config)
    return updated if vehicle is None else vehicle.clip_controls(updated)


def exploration_rate(c_b: float, mu: float, s_e_max: float = math.inf) -> float:
    """``mu * ln(e + c_b)`` capped at ``s_e_max``."""
    if not math.isfinite(c_b):
        return s_e_max
    return min(mu * math.log(math.e + c_b), s_e_max)


def update_exploration(c_b_star: float, config: ControllerConfig) -> ExplorationState:
    if config.adaptive:
        return ExplorationState(exploration_rate(c_b_star, config.mu, config.s_e_max), c_b_star)
    return ExplorationState(1.0, c_b_star)


def shift_warm_start(controls: np.ndarray, fill=None) -> np.ndarray:
    """Drop the first control, shift left, and put ``fill`` (default zero) in the last slot."""
    out = np.empty_like(controls)
    out[:-1] = controls[1:]
    out[-1] = 0.0 if fill is None else fill
    return out


def _projection_half_width(path: ReferencePath, initial: AugmentedState, vehicle: VehicleParams, horizon: int) -> int:
    """Segments a rollout can cross in one step, plus slack."""
    top_speed = abs(initial.nominal.v) + horizon * vehicle.dt * vehicle.accel_max
    spacing = path.total_length / (len(path) - 1)
    return int(math.ceil(top_speed * vehicle.dt / spacing)) + 2


def _score_batch(
    initial: AugmentedState,
    controls: np.ndarray,
    nominal: np.ndarray,
    config: ControllerConfig,
    scenario: Scenario,
    s_e: float,
):
    """Compiled equivalent of :func:`rollout_batch` followed by :func:`trajectory_cost`."""
    vehicle, constraints, barrier, path, costs = (
        scenario.vehicle,
        scenario.constraints,
        scenario.barrier,
        scenario.path,
        scenario.costs,
    )
    s0 = initial.nominal
    offsets = body_shape_offsets(vehicle)
    margin0 = _pose_min_margin(s0.x, s0.y, s0.theta, offsets, constraints)
    _, _, _, _, hint0 = path.project(s0.x, s0.y)
    weights = np.array(
        [
            costs.q_pos,
            costs.q_heading,
            costs.q_speed,
            costs.terminal_q_pos,
            costs.terminal_q_heading,
            costs.terminal_q_speed,
        ]
    )
    return _kernels.rollout_and_score(
        np.array([s0.x, s0.y, s0.theta, s0.v]),
        float(initial.w),
        float(margin0),
        np.ascontiguousarray(controls, dtype=float),
        np.ascontiguousarray(nominal, dtype=float),
        vehicle.wheelbase,
        vehicle.dt,
        offsets,
        np.ascontiguousarray(constraints.centers),
        constraints.radii**2,
        _kernels.INVERSE if barrier.barrier_kind == "inverse" else _kernels.SHIFTED_LOG,
        barrier.epsilon_h,
        barrier.gamma_bas,
        barrier.beta_desired,
        path.segment_table,
        path.reference_table,
        int(hint0),
        _projection_half_width(path, initial, vehicle, config.horizon),
        weights,
        np.linalg.inv(config.sigma * s_e),
        config.gamma_ctrl,
        config.r_barrier,
        config.uses_barrier,
        config.indicator_penalty,
    )


def evaluate_samples(
    initial: AugmentedState,
    nominal: np.ndarray,
    config: ControllerConfig,
    scenario: Scenario,
    exploration: ExplorationState,
    step_index: int,
) -> RolloutBatch:
    """Sample, saturate, roll out and score all ``M`` perturbed sequences.

    With ``n_workers > 1`` the samples are split into contiguous chunks that
    run in a thread pool. Every per-sample quantity depends only on that
    sample, so the batch is bit-identical to the single-worker result.
    """

    def chunk(indices):
        delta = sample_perturbations(config, exploration, step_index, indices)
        controls = scenario.vehicle.clip_controls(nominal[None] + delta)
        states, w, margins, costs = _score_batch(initial, controls, nominal, config, scenario, exploration.s_e)
        return controls - nominal[None], controls, states, w, margins, costs

    indices = np.arange(config.num_samples)
    if config.n_workers == 1:
        parts = [chunk(indices)]
    else:
        splits = [s for s in np.array_split(indices, config.n_workers) if len(s)]
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            parts = list(pool.map(chunk, splits))
    return RolloutBatch(*(np.concatenate([p[i] for p in parts]) for i in range(6)))


def control_step(
    current: AugmentedState,
    nominal: np.ndarray,
    config: ControllerConfig,
    scenario: Scenario,
    exploration: ExplorationState,
    step_index: int = 0,
) -> StepResult:
    """One iteration of the MPPI-DBaS loop.

    If no sampled trajectory is safe the nominal sequence is left unchanged
    and a braking command (zero steer, full deceleration) is returned, with
    ``diagnostics.no_safe_sample`` set.
    """
    vehicle = scenario.vehicle
    batch = evaluate_samples(current, nominal, config, scenario, exploration, step_index)
    num_safe = int(np.isfinite(batch.costs).sum())
    try:
        weights = importance_weights(batch.costs, config.lam)
    except NoSafeSampleError:
        optimized = nominal.copy()
        applied = VehicleControl(0.0, -vehicle.accel_max)
        ess = 0.0
        no_safe = True
    else:
        raw = np.tensordot(weights, batch.perturbations, axes=(0, 0))
        optimized = vehicle.clip_controls(nominal + smooth_controls(raw, config))
        applied = VehicleControl(float(optimized[0, 0]), float(optimized[0, 1]))
        ess = float(1.0 / np.sum(weights**2))
        no_safe = False

    _, w_star, _, _ = _score_batch(current, optimized[None], optimized, config, scenario, exploration.s_e)
    c_b_star = float(barrier_state_cost(w_star, config.r_barrier)[0])
    next_exploration = update_exploration(c_b_star, config)

    diagnostics = StepDiagnostics(
        rho=batch.rho,
        effective_sample_size=ess,
        s_e=next_exploration.s_e,
        s_e_used=exploration.s_e,
        c_b_star=c_b_star,
        min_margin=float(batch.margins[0, 0]),
        num_safe=num_safe,
        no_safe_sample=no_safe,
    )
    return StepResult(applied, shift_warm_start(optimized), next_exploration, diagnostics, optimized)


class MPPIController:
    """Stateful wrapper that carries the warm-start sequence and exploration rate between calls.

    Parameters
    ----------
    config : ControllerConfig
        Sampling, cost and mode settings.
    scenario : Scenario
        Model, constraints and tracking objective shared with the plant.
    """

    def __init__(self, config: ControllerConfig, scenario: Scenario):
        self.config = config
        self.scenario = scenario
        self.reset()

    def reset(self) -> None:
        self.nominal = np.zeros((self.config.horizon, self.config.control_dim))
        self.exploration = ExplorationState.initial(self.config)
        self.step_index = 0

    def step(self, current: AugmentedState) -> StepResult:
        result = control_step(current, self.nominal, self.config, self.scenario, self.exploration, self.step_index)
        self.nominal = result.nominal
        self.exploration = result.exploration
        self.step_index += 1
        return result
