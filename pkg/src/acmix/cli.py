"""Command line entry point.

    acmix run CONFIG
    acmix sweep CONFIG --axis params.N --values 2,4,8,16

Exit codes: 0 success, 1 experiment failure, 2 configuration error. Every
run directory holds ``report.json``, one CSV per table, optional ``.acmx``
snapshots and ``MANIFEST.json`` (config hash, seed, versions, file hashes).
Set ``ACMIX_OUTPUT_DIR`` to override the configured output directory.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .config import ConfigError, config_hash, load_config, parse_config, set_field
from .dynamics import IntegrationError
from .experiments import run_experiment
from .io import write_csv, write_json, write_snapshot
from .steady import StructuralError

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
_FAILURES = (StructuralError, IntegrationError, np.linalg.LinAlgError, FloatingPointError)


def _versions() -> dict:
    return {
        "acmix": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_outputs(cfg, outcome, out: Path) -> list[Path]:
    files = [write_json(out / "report.json", {"experiment": cfg.experiment, "success": outcome.success, **outcome.report})]
    for name, (header, rows) in sorted(outcome.tables.items()):
        files.append(write_csv(out / f"{name}.csv", header, rows))
    for name, (times, states) in sorted(outcome.snapshots.items()):
        files.append(write_snapshot(out / f"{name}.acmx", times, states))
    return files


def _write_manifest(cfg, out: Path, files: list[Path], extra: dict | None = None) -> Path:
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.raw,
        "config_sha256": config_hash(cfg.raw),
        "seed": cfg.seed,
        "rng": "noise path i: SeedSequence([seed, i]); auxiliary draws: SeedSequence(seed, spawn_key=(tag,))",
        "versions": _versions(),
        "files": {f.name: _sha256(f) for f in files},
    }
    if extra:
        manifest.update(extra)
    return write_json(out / "MANIFEST.json", manifest)


def _execute(cfg) -> tuple[int, object, str]:
    """Run one experiment; returns ``(code, outcome or None, message)``."""
    try:
        outcome = run_experiment(cfg)
    except _FAILURES as exc:
        return EXIT_FAIL, None, f"{type(exc).__name__}: {exc}"
    out = cfg.output_dir
    files = _write_outputs(cfg, outcome, out)
    _write_manifest(cfg, out, files)
    if not outcome.success:
        return EXIT_FAIL, outcome, "experiment reported failure"
    return EXIT_OK, outcome, "ok"


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, outcome, msg = _execute(cfg)
    if outcome is not None:
        name, value = outcome.headline
        print(f"{cfg.experiment}: {name} = {value!r} -> {cfg.output_dir}")
    if code:
        print(f"failed: {msg}", file=sys.stderr)
    return code


def _parse_values(text: str) -> list[float]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ConfigError("--values", "empty value list")
    try:
        return [float(s) for s in items]
    except ValueError as exc:
        raise ConfigError("--values", f"not a number list: {text!r}") from exc


def cmd_sweep(args) -> int:
    try:
        base = load_config(args.config)
        values = _parse_values(args.values)
        configs = []
        for i, v in enumerate(values):
            sub = parse_config(set_field(base.raw, args.axis, v))
            sub.output_dir = base.output_dir / f"{i:03d}"
            configs.append(sub)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows, failed = [], False
    headline = None
    for v, cfg in zip(values, configs):
        code, outcome, msg = _execute(cfg)
        if outcome is not None:
            headline = outcome.headline[0]
        value = outcome.headline[1] if outcome is not None else None
        status = "ok" if code == EXIT_OK else f"failed: {msg}"
        failed |= code != EXIT_OK
        rows.append([v, value, status])
        print(f"{args.axis}={v!r}: {status} ({value!r})")
    out = base.output_dir
    header = [args.axis, headline or "headline", "status"]
    files = [write_csv(out / "sweep.csv", header, rows)]
    files.append(write_json(out / "sweep.json", {"axis": args.axis, "metric": headline, "rows": rows}))
    _write_manifest(base, out, files, {"sweep": {"axis": args.axis, "values": values}})
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acmix", description="Allen-Cahn control and mixing experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("config")
    run.set_defaults(func=cmd_run)
    sweep = sub.add_parser("sweep", help="run an experiment over values of one numeric field")
    sweep.add_argument("config")
    sweep.add_argument("--axis", required=True, help="dotted field name, e.g. params.N")
    sweep.add_argument("--values", required=True, help="comma separated numbers")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return args.func(args)
