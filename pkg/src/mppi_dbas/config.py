"""Experiment configuration file: schema, validation, YAML load/dump.

A config file fully describes one experiment: vehicle, reference path,
obstacles, cost weights, barrier and controller settings, stop limits, the
initial state, the batch seeds and the output directory. Unknown keys are
rejected and every error names the offending field and, when loaded from
text, its line.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .controller import MODES, ControllerConfig
from .dynamics import VehicleParams, VehicleState
from .safety import BarrierConfig, CircularObstacle, ConstraintSet
from .scenario import CostParams, Scenario, StopLimits, build_line_semicircle_path

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration, tagged with the field path and source line when known."""

    def __init__(self, message: str, field_path: str = "", line: int | None = None, source: str = ""):
        self.message = message
        self.field_path = field_path
        self.line = line
        self.source = source
        where = source or "<config>"
        if line is not None:
            where += f":{line}"
        prefix = f"{where}: {field_path}: " if field_path else f"{where}: "
        super().__init__(prefix + message)


@dataclass(frozen=True)
class PathSpec:
    """Straight line heading east from the origin followed by a left semicircle."""

    line_length: float = 30.0
    radius: float = 20.0
    ref_speed: float = 5.0
    spacing: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{f.name} must be finite and > 0, got {value!r}")

    def build(self):
        return build_line_semicircle_path(self.line_length, self.radius, self.ref_speed, self.spacing)


@dataclass(frozen=True)
class ExperimentConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    path: PathSpec = field(default_factory=PathSpec)
    obstacles: tuple[CircularObstacle, ...] = ()
    costs: CostParams = field(default_factory=CostParams)
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    modes: tuple[str, ...] = ("dbas-adaptive", "baseline-indicator")
    limits: StopLimits = field(default_factory=StopLimits)
    initial_state: VehicleState = VehicleState(0.0, 0.0, 0.0, 0.0)
    seeds: tuple[int, ...] = tuple(range(20))
    output_dir: str = "runs"
    schema_version: int = SCHEMA_VERSION

    def scenario(self) -> Scenario:
        return Scenario(
            self.path.build(),
            ConstraintSet(self.obstacles),
            self.vehicle,
            self.costs,
            self.barrier,
            self.limits,
            self.initial_state,
        )

    def controller_for(self, mode: str | None = None) -> ControllerConfig:
        return self.controller if mode is None else dataclasses.replace(self.controller, mode=mode)


_SECTIONS = {
    "vehicle": VehicleParams,
    "path": PathSpec,
    "costs": CostParams,
    "barrier": BarrierConfig,
    "controller": ControllerConfig,
    "limits": StopLimits,
    "initial_state": VehicleState,
}
_TOP_KEYS = {f.name for f in fields(ExperimentConfig)}


# ---------------------------------------------------------------- loading


def _line_map(node, prefix: str = "", out: dict | None = None) -> dict[str, int]:
    """Map dotted field paths (``obstacles.2.radius``) to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            out[path] = key_node.start_mark.line + 1
            _line_map(value_node, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}.{i}"
            out[path] = item.start_mark.line + 1
            _line_map(item, path, out)
    return out


class _Reader:
    def __init__(self, lines: dict[str, int], source: str):
        self.lines = lines
        self.source = source

    def error(self, message: str, path: str) -> ConfigError:
        line = None
        probe = path
        while probe and line is None:
            line = self.lines.get(probe)
            probe = probe.rpartition(".")[0]
        return ConfigError(message, path, line, self.source)

    def number(self, value, path: str, kind: type) -> float | int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"expected a number, got {value!r}", path)
        if kind is int:
            if isinstance(value, float):
                raise self.error(f"expected an integer, got {value!r}", path)
            return int(value)
        return float(value)

    def mapping(self, value, path: str) -> dict:
        if not isinstance(value, dict):
            raise self.error(f"expected a mapping, got {type(value).__name__}", path)
        return value

    def sequence(self, value, path: str) -> list:
        if not isinstance(value, list):
            raise self.error(f"expected a list, got {type(value).__name__}", path)
        return value

    def dataclass(self, cls, value, path: str):
        data = self.mapping(value, path)
        names = {f.name: f for f in fields(cls)}
        for key in data:
            if key not in names:
                raise self.error(f"unknown key {key!r}; expected one of {sorted(names)}", f"{path}.{key}")
        kwargs = {}
        for name, raw in data.items():
            kwargs[name] = self.field_value(names[name].default, raw, f"{path}.{name}")
        try:
            return cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise self.error(str(exc), path) from None

    def field_value(self, default, raw, path: str):
        # Field types are inferred from the defaults; fields without one are floats.
        if default is dataclasses.MISSING:
            return self.number(raw, path, float)
        if isinstance(default, bool):
            if not isinstance(raw, bool):
                raise self.error(f"expected true/false, got {raw!r}", path)
            return raw
        if isinstance(default, (int, float)):
            return self.number(raw, path, type(default))
        if isinstance(default, str):
            if not isinstance(raw, str):
                raise self.error(f"expected a string, got {raw!r}", path)
            return raw
        if isinstance(default, tuple):
            # only sigma_u: a square matrix given as a list of rows
            rows = self.sequence(raw, path)
            return tuple(
                tuple(self.number(x, f"{path}.{i}.{j}", float) for j, x in enumerate(self.sequence(row, f"{path}.{i}")))
                for i, row in enumerate(rows)
            )
        raise self.error("unsupported field type", path)

    def obstacle(self, value, path: str) -> CircularObstacle:
        data = self.mapping(value, path)
        extra = set(data) - {"center", "radius"}
        if extra:
            raise self.error(f"unknown key {sorted(extra)[0]!r}; expected center, radius", f"{path}.{sorted(extra)[0]}")
        for key in ("center", "radius"):
            if key not in data:
                raise self.error(f"missing key {key!r}", path)
        center = self.sequence(data["center"], f"{path}.center")
        if len(center) != 2:
            raise self.error("center must have two coordinates", f"{path}.center")
        cx, cy = (self.number(c, f"{path}.center.{i}", float) for i, c in enumerate(center))
        radius = self.number(data["radius"], f"{path}.radius", float)
        try:
            return CircularObstacle((cx, cy), radius)
        except ValueError as exc:
            raise self.error(str(exc), path) from None

    def experiment(self, value) -> ExperimentConfig:
        data = self.mapping(value, "")
        for key in data:
            if key not in _TOP_KEYS:
                raise self.error(f"unknown key {key!r}", str(key))
        if "schema_version" not in data:
            raise self.error("missing schema_version", "schema_version")
        version = self.number(data["schema_version"], "schema_version", int)
        if version != SCHEMA_VERSION:
            raise self.error(f"unsupported schema_version {version}; this build reads {SCHEMA_VERSION}", "schema_version")
        kwargs: dict[str, Any] = {"schema_version": version}
        for name, cls in _SECTIONS.items():
            if name in data:
                kwargs[name] = self.dataclass(cls, data[name], name)
        if "obstacles" in data:
            items = self.sequence(data["obstacles"], "obstacles")
            kwargs["obstacles"] = tuple(self.obstacle(o, f"obstacles.{i}") for i, o in enumerate(items))
        if "modes" in data:
            modes = self.sequence(data["modes"], "modes")
            for i, m in enumerate(modes):
                if m not in MODES:
                    raise self.error(f"unknown mode {m!r}; expected one of {list(MODES)}", f"modes.{i}")
            if not modes:
                raise self.error("at least one mode is required", "modes")
            kwargs["modes"] = tuple(modes)
        if "seeds" in data:
            seeds = self.sequence(data["seeds"], "seeds")
            kwargs["seeds"] = tuple(self.number(s, f"seeds.{i}", int) for i, s in enumerate(seeds))
            if not seeds:
                raise self.error("at least one seed is required", "seeds")
            if any(s < 0 for s in kwargs["seeds"]):
                raise self.error("seeds must be >= 0", "seeds")
        if "output_dir" in data:
            if not isinstance(data["output_dir"], str) or not data["output_dir"]:
                raise self.error("expected a non-empty string", "output_dir")
            kwargs["output_dir"] = data["output_dir"]
        return ExperimentConfig(**kwargs)


def loads(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse and validate a config document."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", "", line, source) from None
    if data is None:
        raise ConfigError("empty config", "", None, source)
    return _Reader(_line_map(root), source).experiment(data)


def load(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return loads(path.read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------- dumping


def to_dict(config: ExperimentConfig) -> dict:
    def plain(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: plain(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, (tuple, list)):
            return [plain(x) for x in obj]
        return obj

    out = {"schema_version": config.schema_version}
    for f in fields(config):
        if f.name == "schema_version":
            continue
        value = getattr(config, f.name)
        if f.name == "obstacles":
            out[f.name] = [{"center": list(o.center), "radius": o.radius} for o in value]
        else:
            out[f.name] = plain(value)
    return out


def dumps(config: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=False, default_flow_style=None)


def dump(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(dumps(config), encoding="utf-8")


def default_config_path() -> Path:
    return Path(__file__).with_name("configs") / "tight_gap.yaml"


def load_default() -> ExperimentConfig:
    """The shipped tight-gap scenario."""
    return load(default_config_path())
