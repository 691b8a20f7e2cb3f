"""Command-line entry point.

Subcommands ``master``, ``filter``, ``ensemble``, ``validate`` and ``export``
share a TOML configuration; flags cover only paths, overrides, thread count
and verbosity.  All emitted data files embed (version, seed, dt, config hash)
via a sidecar metadata JSON and are byte-identical across reruns with
identical inputs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation-suite failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cat import propagate_cat_master, simulate_trajectory_cat
from .config import RunConfig, canonical_toml, config_hash, parse_config, version_string
from .ensemble import run_ensemble
from .errors import (ConfigValidationError, ConsistencyError, DegenerateLikelihood,
                     GridError, ModelError, NumericalBlowup, ParseError,
                     PhotonFilterError, RecordError)
from .filter_sp import simulate_trajectory_sp
from .master_sp import propagate_master_sp
from .model import CoherentModes
from .series import ComponentSeries, MeasurementRecord, _fmt
from .validation import run_validation_suite

log = logging.getLogger(__name__)

_CONFIG_ERRORS = (ParseError, ConfigValidationError, ModelError, GridError, RecordError)
_NUMERICAL_ERRORS = (NumericalBlowup, DegenerateLikelihood, ConsistencyError)


def export_plot_data(series: ComponentSeries, path) -> Path:
    """Write a long-format CSV ``time, series_name, value``.

    Complex series produce two rows per time point, suffixed ``_re``/``_im``.
    An empty series is an error and no file is written.
    """
    if len(series.times) == 0:
        raise PhotonFilterError("refusing to export an empty series")
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("time,series_name,value\n")
        for i, lab in enumerate(series.labels):
            for p, (j, k) in enumerate(series.pairs):
                stem = f"{series.prefix}_{j}{k}_{lab}"
                for it, t in enumerate(series.times):
                    v = series.values[i, p, it]
                    fh.write(f"{_fmt(t)},{stem}_re,{_fmt(v.real)}\n")
                    fh.write(f"{_fmt(t)},{stem}_im,{_fmt(v.imag)}\n")
            if series.combined is not None:
                for it, t in enumerate(series.times):
                    v = series.combined[i, it]
                    fh.write(f"{_fmt(t)},combined_{lab}_re,{_fmt(v.real)}\n")
                    fh.write(f"{_fmt(t)},combined_{lab}_im,{_fmt(v.imag)}\n")
    return path


def _export_csv_file(src: Path, dst: Path) -> Path:
    """Convert any emitted wide CSV into the long plot format."""
    with open(src, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if not rows or header[0] != "time":
        raise PhotonFilterError(f"{src} is not a time-series CSV")
    with open(dst, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("time,series_name,value\n")
        for name_idx in range(1, len(header)):
            for row in rows:
                fh.write(f"{row[0]},{header[name_idx]},{row[name_idx]}\n")
    return dst


def _write_metadata(path: Path, cfg: RunConfig, mode: str, extra: dict | None = None) -> None:
    meta = {"version": version_string(), "seed": cfg.seed, "dt": cfg.dt,
            "config_sha256": config_hash(cfg), "mode": mode}
    meta.update(extra or {})
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run(cfg: RunConfig, out_dir, replay: MeasurementRecord | None = None) -> int:
    """Execute one configured run, writing artifacts into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    observables = cfg.observable_request()
    (out / "config.canonical.toml").write_text(canonical_toml(cfg), encoding="utf-8")

    if cfg.mode == "master":
        if isinstance(cfg.field_spec, CoherentModes):
            series = propagate_cat_master(cfg.model, cfg.field_spec, cfg.dt,
                                          cfg.horizon, observables,
                                          n_out=cfg.output_points)
        else:
            series = propagate_master_sp(cfg.model, cfg.field_spec, cfg.horizon,
                                         cfg.dt, observables,
                                         n_out=cfg.output_points)
        series.to_csv(out / "master_series.csv")
        _write_metadata(out / "master_series.meta.json", cfg, "master")
        return 0

    if cfg.mode == "filter":
        if isinstance(cfg.field_spec, CoherentModes):
            record, series = simulate_trajectory_cat(
                cfg.model, cfg.field_spec, cfg.dt, cfg.horizon, observables,
                seed=cfg.seed, record=replay, n_out=cfg.output_points)
        else:
            record, series = simulate_trajectory_sp(
                cfg.model, cfg.field_spec, cfg.dt, cfg.horizon, observables,
                seed=cfg.seed, record=replay, n_out=cfg.output_points)
        record.to_csv(out / "record.csv")
        series.to_csv(out / "filter_series.csv")
        _write_metadata(out / "filter_series.meta.json", cfg, "filter",
                        {"replayed": replay is not None})
        return 0

    if cfg.mode == "ensemble":
        t0 = time.perf_counter()
        report = run_ensemble(cfg.model, cfg.field_spec, dt=cfg.dt, T=cfg.horizon,
                              n_traj=cfg.trajectories, base_seed=cfg.seed,
                              observables=observables,
                              n_out=cfg.output_points or 100,
                              threads=cfg.threads)
        wall = time.perf_counter() - t0
        report.to_csv(out / "ensemble_report.csv")
        _write_metadata(out / "ensemble_report.meta.json", cfg, "ensemble",
                        dict(report.metadata(), wall_time_s=wall))
        return 0

    if cfg.mode == "validate":
        results = run_validation_suite(seed=cfg.seed)
        width = max(len(r.name) for r in results)
        for r in results:
            flag = "PASS" if r.passed else "FAIL"
            print(f"{r.name:<{width}}  [{flag}]  {r.detail}")
        payload = [{"name": r.name, "passed": r.passed, "detail": r.detail}
                   for r in results]
        (out / "validation_report.json").write_text(
            json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        _write_metadata(out / "validation_report.meta.json", cfg, "validate")
        n_fail = sum(not r.passed for r in results)
        print(f"{len(results) - n_fail}/{len(results)} checks passed")
        return 4 if n_fail else 0

    raise ConfigValidationError([f"unsupported mode {cfg.mode!r}"])


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photonfilter",
        description="Master and filter equations for single-photon and "
                    "cat-state driven quantum systems.")
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_command(name, helptext):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override [run].seed")
        p.add_argument("--threads", type=int, default=None, help="override [run].threads")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    add_run_command("master", "propagate the unconditional component equations")
    p_filter = add_run_command("filter", "simulate one conditional trajectory")
    p_filter.add_argument("--replay", default=None, metavar="RECORD.csv",
                          help="replay a previously emitted measurement record")
    add_run_command("ensemble", "Monte-Carlo trajectory ensemble")
    add_run_command("validate", "run the cross-formulation validation suite")

    p_exp = sub.add_parser("export", help="convert an emitted CSV to long plot format")
    p_exp.add_argument("input", help="series CSV produced by another subcommand")
    p_exp.add_argument("--out", required=True, help="output CSV path")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.DEBUG)
    try:
        if args.command == "export":
            _export_csv_file(Path(args.input), Path(args.out))
            return 0
        cfg = parse_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        if args.command != cfg.mode:
            overrides["mode"] = args.command
        if overrides:
            canonical = dict(cfg.canonical)
            canonical["run"] = dict(canonical["run"],
                                    **{k: v for k, v in overrides.items()})
            cfg = replace(cfg, **overrides)
            object.__setattr__(cfg, "canonical", canonical)
        replay = None
        if getattr(args, "replay", None):
            replay = MeasurementRecord.from_csv(Path(args.replay))
        return run(cfg, args.out, replay=replay)
    except _CONFIG_ERRORS as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
