"""Sampling-based MPC (MPPI) with embedded discrete barrier states for collision avoidance."""

from .controller import (
    ControllerConfig,
    ExplorationState,
    MPPIController,
    NoSafeSampleError,
    StepDiagnostics,
    StepResult,
    control_step,
)
from .dynamics import VehicleControl, VehicleParams, VehicleState, step_vehicle
from .safety import AugmentedState, BarrierConfig, CircularObstacle, ConstraintSet
from .scenario import CostParams, Outcome, OutcomeClass, Scenario, StopLimits, build_line_semicircle_path
from .simharness import BatchSummary, RunRecord, run_batch, run_episode

__version__ = "0.1.0"

__all__ = [
    "AugmentedState",
    "BarrierConfig",
    "BatchSummary",
    "CircularObstacle",
    "ConstraintSet",
    "ControllerConfig",
    "CostParams",
    "ExplorationState",
    "MPPIController",
    "NoSafeSampleError",
    "Outcome",
    "OutcomeClass",
    "RunRecord",
    "Scenario",
    "StepDiagnostics",
    "StepResult",
    "StopLimits",
    "VehicleControl",
    "VehicleParams",
    "VehicleState",
    "build_line_semicircle_path",
    "control_step",
    "run_batch",
    "run_episode",
    "step_vehicle",
]
