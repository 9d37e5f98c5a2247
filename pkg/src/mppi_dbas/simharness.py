"""Closed-loop episodes, seeded batches and per-step statistics across runs."""

from __future__ import annotations

import csv
import io
import logging
import math
import traceback
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .controller import ControllerConfig, MPPIController
from .dynamics import VehicleState, step_vehicle
from .safety import dbas_step, initial_augmented, min_margin, AugmentedState
from .scenario import Outcome, OutcomeClass, ProgressTracker, Scenario, classify_outcome

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = (
    "step",
    "t",
    "x",
    "y",
    "theta",
    "v",
    "steer",
    "accel",
    "w",
    "s_e",
    "c_b_star",
    "min_margin",
    "rho",
)


@dataclass
class StepRow:
    step: int
    t: float
    x: float
    y: float
    theta: float
    v: float
    steer: float
    accel: float
    w: float
    s_e: float
    c_b_star: float
    min_margin: float
    rho: float
    no_safe_sample: bool = False

    @property
    def state(self) -> VehicleState:
        return VehicleState(self.x, self.y, self.theta, self.v)


@dataclass
class RunRecord:
    """One closed-loop episode.

    ``rows[k]`` holds the state at step ``k``, the control applied there and
    the controller diagnostics; the last row is the terminal state, whose
    control and diagnostic fields are NaN.
    """

    seed: int
    mode: str
    rows: list[StepRow]
    outcome: Outcome
    no_safe_sample_steps: int = 0

    @property
    def steps(self) -> int:
        return len(self.rows) - 1

    @property
    def control_rows(self) -> list[StepRow]:
        return self.rows[:-1]

    def states(self) -> list[VehicleState]:
        return [r.state for r in self.rows]

    def series(self, name: str) -> np.ndarray:
        """Per-step values of one column over the steps that applied a control."""
        return np.array([getattr(r, name) for r in self.control_rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for r in self.rows:
            writer.writerow([r.step] + [repr(float(getattr(r, c))) for c in TRAJECTORY_COLUMNS[1:]])
        return buf.getvalue()


def rows_from_csv(text: str) -> list[StepRow]:
    """Parse a trajectory CSV written by :meth:`RunRecord.to_csv`."""
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header != TRAJECTORY_COLUMNS:
        raise ValueError(f"unexpected trajectory header {header!r}")
    rows = []
    for values in reader:
        if len(values) != len(TRAJECTORY_COLUMNS):
            raise ValueError(f"trajectory row has {len(values)} fields, expected {len(TRAJECTORY_COLUMNS)}")
        rows.append(StepRow(int(values[0]), *(float(v) for v in values[1:])))
    if not rows:
        raise ValueError("trajectory CSV has no rows")
    return rows


def reclassify(record: RunRecord, scenario: Scenario) -> Outcome:
    """Recompute the outcome from the logged rows alone."""
    return classify_outcome(
        record.states(), [r.min_margin for r in record.rows], scenario.path, scenario.limits, scenario.vehicle.dt
    )


def run_episode(scenario: Scenario, config: ControllerConfig, seed: int) -> RunRecord:
    """Drive the plant with the controller until the run is decided.

    The loop stops on obstacle contact, a stall, reaching the path end, or
    the step budget. Steps where no sampled trajectory was safe apply the
    controller's braking fallback and are counted on the record.
    """
    config = replace(config, rng_seed=seed)
    vehicle, constraints, barrier = scenario.vehicle, scenario.constraints, scenario.barrier
    limits = scenario.limits
    controller = MPPIController(config, scenario)
    tracker = ProgressTracker(scenario.path)
    stall_need = limits.stall_steps(vehicle.dt)

    current = initial_augmented(scenario.initial_state, vehicle, constraints, barrier)
    margin = min_margin(current.nominal, vehicle, constraints)
    tracker.update(current.nominal.x, current.nominal.y)
    stall_run = 1 if current.nominal.v < limits.v_stall else 0
    rows: list[StepRow] = []
    fallbacks = 0
    k = 0
    while margin >= 0 and stall_run < stall_need and not tracker.reached_end(limits.goal_tolerance) and k < limits.max_steps:
        result = controller.step(current)
        d = result.diagnostics
        if d.no_safe_sample:
            fallbacks += 1
            log.info("seed %d step %d: no safe sample, braking", seed, k)
        s = current.nominal
        rows.append(
            StepRow(k, k * vehicle.dt, s.x, s.y, s.theta, s.v, result.control.steer, result.control.accel,
                    current.w, d.s_e, d.c_b_star, margin, d.rho, d.no_safe_sample)
        )
        nxt = step_vehicle(s, result.control, vehicle)
        current = AugmentedState(nxt, dbas_step(current.w, nxt, vehicle, constraints, barrier))
        margin = min_margin(nxt, vehicle, constraints)
        tracker.update(nxt.x, nxt.y)
        stall_run = stall_run + 1 if nxt.v < limits.v_stall else 0
        k += 1

    s = current.nominal
    nan = math.nan
    rows.append(StepRow(k, k * vehicle.dt, s.x, s.y, s.theta, s.v, nan, nan, current.w, nan, nan, margin, nan))
    outcome = classify_outcome([r.state for r in rows], [r.min_margin for r in rows], scenario.path, limits, vehicle.dt)
    return RunRecord(seed, config.mode, rows, outcome, fallbacks)


@dataclass
class Band:
    mean: np.ndarray
    std: np.ndarray


def aggregate_bands(records: Sequence[RunRecord], name: str) -> Band:
    """Per-step mean and sample standard deviation of ``name`` over the common prefix of the runs."""
    if not records:
        raise ValueError("aggregate_bands needs at least one record")
    series = [r.series(name) for r in records]
    n = min(len(s) for s in series)
    stacked = np.stack([s[:n] for s in series])
    std = stacked.std(axis=0, ddof=1) if len(records) > 1 else np.zeros(n)
    return Band(stacked.mean(axis=0), std)


BAND_FIELDS = ("v", "steer", "w")


@dataclass
class BatchSummary:
    mode: str
    seeds: list[int]
    counts: dict[str, int]
    avg_speed_mean: float
    avg_speed_std: float
    avg_position_error_mean: float
    avg_position_error_std: float
    bands: dict[str, Band] = field(repr=False, default_factory=dict)
    harness_failures: dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seeds": list(self.seeds),
            "success": self.counts[OutcomeClass.SUCCESS.value],
            "fail_stop": self.counts[OutcomeClass.FAIL_STOP.value],
            "fail_collision": self.counts[OutcomeClass.FAIL_COLLISION.value],
            "avg_vel": self.avg_speed_mean,
            "avg_vel_std": self.avg_speed_std,
            "avg_pos_error": self.avg_position_error_mean,
            "avg_pos_error_std": self.avg_position_error_std,
            "harness_failures": {str(k): v for k, v in self.harness_failures.items()},
        }


def summarize(mode: str, records: Sequence[RunRecord], failures: dict[int, str] | None = None) -> BatchSummary:
    counts = {c.value: 0 for c in OutcomeClass}
    for r in records:
        counts[r.outcome.outcome_class.value] += 1
    speeds = np.array([r.outcome.avg_speed for r in records])
    errors = np.array([r.outcome.avg_position_error for r in records])

    def stats(a):
        if len(a) == 0:
            return math.nan, math.nan
        return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0

    bands = {name: aggregate_bands(records, name) for name in BAND_FIELDS} if records else {}
    return BatchSummary(mode, [r.seed for r in records], counts, *stats(speeds), *stats(errors), bands, dict(failures or {}))


@dataclass
class BatchResult:
    summaries: list[BatchSummary]
    records: dict[str, list[RunRecord]]


def run_batch(
    scenario: Scenario,
    configs: Iterable[ControllerConfig] | dict[str, ControllerConfig],
    seeds: Sequence[int],
) -> BatchResult:
    """Run every (configuration, seed) pair and aggregate per configuration.

    ``configs`` may be a mapping from label to config; a plain iterable is
    labelled by each config's mode. An exception inside one run is recorded
    as a harness failure for that seed and does not count as an outcome.
    """
    if not seeds:
        raise ValueError("run_batch needs at least one seed")
    labelled = dict(configs) if isinstance(configs, dict) else {c.mode: c for c in configs}
    summaries, records = [], {}
    for label, config in labelled.items():
        runs, failures = [], {}
        for seed in seeds:
            try:
                runs.append(run_episode(scenario, config, seed))
            except Exception:  # isolate a crashing run from the rest of the batch
                failures[seed] = traceback.format_exc(limit=3)
                log.error("harness failure in %s seed %d", label, seed)
        records[label] = runs
        summaries.append(summarize(label, runs, failures))
    return BatchResult(summaries, records)
