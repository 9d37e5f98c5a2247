"""Command-line front end.

    mppi-dbas run CONFIG [--mode M] [--seed S] [--out DIR]
    mppi-dbas batch CONFIG [--modes M1,M2] [--out DIR]
    mppi-dbas export-plots RUN_OR_BATCH_DIR [--out DIR]

The output directory is taken from ``--out``, else the ``MPPI_DBAS_OUT``
environment variable, else the config's ``output_dir``. Exit status is 0
for any completed run (the outcome lives in the JSON), 2 for a config
error and 3 for an I/O error or missing inputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfg
from .controller import MODES
from .scenario import Outcome
from .simharness import BAND_FIELDS, RunRecord, aggregate_bands, rows_from_csv, run_batch, run_episode

log = logging.getLogger("mppi_dbas")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
OUT_ENV = "MPPI_DBAS_OUT"

TRAJECTORY_FILE = "trajectory.csv"
OUTCOME_FILE = "outcome.json"
SUMMARY_FILE = "summary.json"
CONFIG_COPY = "config.yaml"


class InputError(OSError):
    """Missing or unreadable inputs for a command."""


def _out_dir(args, experiment: cfg.ExperimentConfig) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or experiment.output_dir)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _write_run(directory: Path, record: RunRecord) -> None:
    _write(directory / TRAJECTORY_FILE, record.to_csv())
    outcome = dict(record.outcome.to_dict(), seed=record.seed, mode=record.mode,
                   no_safe_sample_steps=record.no_safe_sample_steps)
    _write(directory / OUTCOME_FILE, _json(outcome))


def _workers(experiment: cfg.ExperimentConfig, workers: int | None) -> cfg.ExperimentConfig:
    if workers is None:
        return experiment
    try:
        return replace(experiment, controller=replace(experiment.controller, n_workers=workers))
    except ValueError as exc:
        raise cfg.ConfigError(str(exc), "--workers") from None


def cmd_run(args) -> int:
    experiment = _workers(cfg.load(args.config), args.workers)
    seed = experiment.seeds[0] if args.seed is None else args.seed
    if seed < 0:
        raise cfg.ConfigError("seed must be >= 0", "--seed")
    out = _out_dir(args, experiment)
    record = run_episode(experiment.scenario(), experiment.controller_for(args.mode), seed)
    _write(out / CONFIG_COPY, cfg.dumps(experiment))
    _write_run(out, record)
    o = record.outcome
    print(f"{record.mode} seed {seed}: {o.outcome_class.value} after {o.steps} steps ({o.reason})")
    return EXIT_OK


def cmd_batch(args) -> int:
    experiment = _workers(cfg.load(args.config), args.workers)
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip()) if args.modes else experiment.modes
    for m in modes:
        if m not in MODES:
            raise cfg.ConfigError(f"unknown mode {m!r}; expected one of {list(MODES)}", "--modes")
    out = _out_dir(args, experiment)
    configs = {m: experiment.controller_for(m) for m in modes}
    result = run_batch(experiment.scenario(), configs, list(experiment.seeds))
    _write(out / CONFIG_COPY, cfg.dumps(replace(experiment, modes=modes)))
    for mode, records in result.records.items():
        for record in records:
            _write_run(out / mode / f"seed_{record.seed:03d}", record)
    summary = {"modes": [s.to_dict() for s in result.summaries]}
    _write(out / SUMMARY_FILE, _json(summary))
    for s in result.summaries:
        print(f"{s.mode}: success {s.counts['Success']}, fail_stop {s.counts['FailStop']}, "
              f"fail_collision {s.counts['FailCollision']}, avg_vel {s.avg_speed_mean:.3f}, "
              f"avg_pos_error {s.avg_position_error_mean:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------- export-plots


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"missing input {path}") from None


def _load_record(directory: Path) -> RunRecord:
    try:
        rows = rows_from_csv(_read_text(directory / TRAJECTORY_FILE))
        meta = json.loads(_read_text(directory / OUTCOME_FILE))
        return RunRecord(int(meta["seed"]), meta["mode"], rows, Outcome.from_dict(meta),
                         int(meta.get("no_safe_sample_steps", 0)))
    except (ValueError, KeyError) as exc:
        raise InputError(f"unreadable run in {directory}: {exc}") from None


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _scene_files(out: Path, experiment: cfg.ExperimentConfig) -> None:
    path = experiment.path.build()
    _write(out / "reference.csv", _csv(
        ("s", "x", "y", "heading", "speed"),
        ((float(s), float(x), float(y), float(h), float(v))
         for s, (x, y), h, v in zip(path.arclength, path.points, path.headings, path.speeds)),
    ))
    _write(out / "obstacles.csv", _csv(
        ("index", "cx", "cy", "radius"),
        ((i, o.center[0], o.center[1], float(o.radius)) for i, o in enumerate(experiment.obstacles)),
    ))


def _path_rows(record: RunRecord):
    for r in record.rows:
        yield record.mode, record.seed, r.step, r.t, r.x, r.y, r.theta, r.v


PATH_HEADER = ("mode", "seed", "step", "t", "x", "y", "theta", "v")


def _band_csv(records: list[RunRecord], dt: float) -> str:
    bands = {name: aggregate_bands(records, name) for name in BAND_FIELDS}
    n = len(next(iter(bands.values())).mean)
    header = ["step", "t"] + [f"{name}_{stat}" for name in BAND_FIELDS for stat in ("mean", "std")]
    rows = []
    for k in range(n):
        row = [k, k * dt]
        for name in BAND_FIELDS:
            row += [float(bands[name].mean[k]), float(bands[name].std[k])]
        rows.append(row)
    return _csv(header, rows)


def cmd_export_plots(args) -> int:
    source = Path(args.source)
    if not source.is_dir():
        raise InputError(f"missing input directory {source}")
    config_path = source / CONFIG_COPY
    if not config_path.is_file():
        raise InputError(f"missing input {config_path}")
    experiment = cfg.load(config_path)
    out = Path(args.out) if args.out else source / "plots"
    dt = experiment.vehicle.dt
    _scene_files(out, experiment)

    if (source / TRAJECTORY_FILE).is_file():
        record = _load_record(source)
        _write(out / "path.csv", _csv(PATH_HEADER, _path_rows(record)))
        _write(out / f"bands_{record.mode}.csv", _band_csv([record], dt))
        print(f"wrote plot data for one run to {out}")
        return EXIT_OK

    mode_dirs = sorted(d for d in source.iterdir() if d.is_dir() and d.name in MODES)
    if not mode_dirs:
        raise InputError(f"{source} holds neither {TRAJECTORY_FILE} nor per-mode run directories")
    all_rows = []
    for mode_dir in mode_dirs:
        run_dirs = sorted(d for d in mode_dir.iterdir() if d.is_dir() and d.name.startswith("seed_"))
        if not run_dirs:
            raise InputError(f"no runs under {mode_dir}")
        records = [_load_record(d) for d in run_dirs]
        for record in records:
            all_rows.extend(_path_rows(record))
        _write(out / f"bands_{mode_dir.name}.csv", _band_csv(records, dt))
    _write(out / "path.csv", _csv(PATH_HEADER, all_rows))
    print(f"wrote plot data for {len(mode_dirs)} mode(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mppi-dbas", description="Safety-embedded MPPI with barrier states.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one closed-loop episode")
    run.add_argument("config", help="experiment config file (YAML)")
    run.add_argument("--mode", choices=MODES, default=None, help="controller mode (default: from config)")
    run.add_argument("--seed", type=int, default=None, help="episode seed (default: first config seed)")
    run.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or config output_dir)")
    run.add_argument("--workers", type=int, default=None, help="rollout worker threads")
    run.set_defaults(func=cmd_run)

    batch = sub.add_parser("batch", help="run every mode over every config seed")
    batch.add_argument("config", help="experiment config file (YAML)")
    batch.add_argument("--modes", default=None, help="comma-separated modes (default: from config)")
    batch.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or config output_dir)")
    batch.add_argument("--workers", type=int, default=None, help="rollout worker threads")
    batch.set_defaults(func=cmd_batch)

    plots = sub.add_parser("export-plots", help="write plot-ready CSVs from a run or batch directory")
    plots.add_argument("source", help="directory written by 'run' or 'batch'")
    plots.add_argument("--out", default=None, help="output directory (default: SOURCE/plots)")
    plots.set_defaults(func=cmd_export_plots)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfg.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
