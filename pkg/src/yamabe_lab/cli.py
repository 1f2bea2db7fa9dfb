"""Command line front end.

    python -m yamabe_lab run <config.json> [--out DIR] [--threads N] [--check]
    python -m yamabe_lab suite <manifest.json> [--out DIR] [--threads N]

Exit codes: 0 ok, 2 validation error, 3 solver failure, 4 tolerance failure
(``run`` only with ``--check``; ``suite`` always checks).  The output
directory is ``--out``, else ``$YAMABE_LAB_OUT``, else the config's
``outputs.dir``, else ``./out``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .experiments import RUNNERS, checks_to_dicts
from .grid import GeometryError, NumericalFailure
from .product import ProductSolveError
from .schema import ConfigError, validate, validate_manifest, with_defaults
from .solver import SolverFailure
from .variation import CurveError

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_TOLERANCE = 0, 2, 3, 4
ENV_OUT = "YAMABE_LAB_OUT"

log = logging.getLogger("yamabe_lab")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c) for c in columns})


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    validate(cfg)
    return cfg


def resolve_out(cli_out: str | None, cfg: dict | None = None) -> Path:
    if cli_out:
        return Path(cli_out)
    if os.environ.get(ENV_OUT):
        return Path(os.environ[ENV_OUT])
    if cfg and cfg.get("outputs", {}).get("dir"):
        return Path(cfg["outputs"]["dir"])
    return Path("out")


def execute(cfg: dict, seed_seq: np.random.SeedSequence) -> dict:
    """Run one validated config; never raises for solver trouble, returns a report instead."""
    full = with_defaults(cfg)
    report = {"name": full["name"], "kind": full["kind"], "config": full}
    try:
        results, checks, tables = RUNNERS[full["kind"]](full, seed_seq)
    except (SolverFailure, ProductSolveError, NumericalFailure) as exc:
        report.update(status="solver_failure", exit_code=EXIT_SOLVER,
                      diagnostics={"error": type(exc).__name__, "message": str(exc),
                                   **getattr(exc, "report", {})})
        return _jsonable(report), {}
    except (GeometryError, CurveError, ValueError) as exc:
        report.update(status="validation_error", exit_code=EXIT_VALIDATION,
                      diagnostics={"error": type(exc).__name__, "message": str(exc)})
        return _jsonable(report), {}
    failed = [c.name for c in checks if not c.passed]
    report.update(results=results, checks=checks_to_dicts(checks), failed_checks=failed,
                  status="tolerance_failure" if failed else "ok",
                  exit_code=EXIT_TOLERANCE if failed else EXIT_OK)
    return _jsonable(report), tables


def write_outputs(report: dict, tables: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    stamped = {**report, "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with open(out / f"{report['name']}.json", "w") as fh:
        json.dump(stamped, fh, indent=2)
    for stem, (cols, rows) in tables.items():
        _write_csv(out / f"{report['name']}_{stem}.csv", cols, rows)


def _seed_for(cfg: dict, suite_seed: int | None) -> np.random.SeedSequence:
    """Experiment seed; inside a suite it is keyed by name so adding experiments perturbs nothing."""
    seed = cfg.get("seed", 0)
    if suite_seed is None:
        return np.random.SeedSequence(seed)
    key = zlib.crc32(cfg.get("name", cfg["kind"]).encode())
    return np.random.SeedSequence(suite_seed, spawn_key=(key, seed))


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = resolve_out(args.out, cfg)
    report, tables = execute(cfg, _seed_for(cfg, None))
    if report["exit_code"] == EXIT_VALIDATION:
        print(f"validation error: {report['diagnostics']['message']}", file=sys.stderr)
        return EXIT_VALIDATION
    write_outputs(report, tables, out)
    for c in report.get("checks", []):
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']!r} {c['op']} {c['tolerance']!r}")
    code = report["exit_code"]
    if code == EXIT_TOLERANCE and not args.check:
        code = EXIT_OK
    print(f"{report['name']}: {report['status']} -> {out}")
    return code


def _suite_job(item):
    path, suite_seed = item
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        name = Path(path).stem
        return {"name": name, "kind": None, "status": "validation_error", "exit_code": EXIT_VALIDATION,
                "diagnostics": {"message": str(exc)}}, {}
    return execute(cfg, _seed_for(cfg, suite_seed))


def cmd_suite(args) -> int:
    try:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        validate_manifest(manifest)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    base = Path(args.manifest).parent
    items = [(str(base / p), manifest.get("seed", 0)) for p in manifest["experiments"]]
    out = resolve_out(args.out)
    if args.threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(_suite_job, items))
    else:
        results = [_suite_job(it) for it in items]
    rows = []
    for report, tables in results:
        write_outputs(report, tables, out / report["name"])
        rows.append({"name": report["name"], "kind": report["kind"], "status": report["status"],
                     "exit_code": report["exit_code"], "failed_checks": ";".join(report.get("failed_checks", []))})
        print(f"{report['status']:>18}  {report['name']}")
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "suite_status.csv", ["name", "kind", "status", "exit_code", "failed_checks"], rows)
    with open(out / "suite_report.json", "w") as fh:
        json.dump({"manifest": str(args.manifest), "experiments": rows}, fh, indent=2)
    return max((r["exit_code"] for r in rows), default=EXIT_OK)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="yamabe_lab", description="Yamabe constant experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="concurrent experiments (suite)")
    common.add_argument("--check", action="store_true", help="exit 4 when a declared tolerance fails")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run one experiment config")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("suite", parents=[common], help="run every config listed in a manifest")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_suite)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.threads < 1:
        print("validation error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    return args.func(args)
