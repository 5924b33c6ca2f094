"""Command-line entry point: ``bench run``, ``bench compare`` and ``bench export-mdp``."""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bench import BenchError, ExperimentConfig, emit_table, run_experiment, write_report
from .stats import t_test_independent, t_test_paired

_INT_KEYS = {"n_seeds", "n_behavior", "n_target", "short_h", "k_folds", "base_seed", "workers"}
_FLOAT_KEYS = {"omega", "eps_b", "eps_e"}
_BOOL_KEYS = {"factorized", "intercept"}
_LIST_KEYS = {"estimators", "sweep"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines into :class:`ExperimentConfig` keyword arguments.

    Blank lines and ``#`` comments are ignored; list values are comma separated.
    """
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _convert(key, value)
    return out


def _convert(key: str, value: str):
    if key in _LIST_KEYS:
        items = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(float(v) for v in items) if key == "sweep" else tuple(items)
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        low = value.lower()
        if low not in _TRUE | _FALSE:
            raise ValueError(f"{key} must be a boolean, got {value!r}")
        return low in _TRUE
    return value


def _add_run_parser(sub) -> None:
    p = sub.add_parser("run", help="run a seeded experiment and write rows and summary tables")
    p.add_argument("--config", type=Path, help="flat 'key = value' config file")
    p.add_argument("--env", dest="environment", choices=("toy", "sepsis"))
    p.add_argument("--scenario")
    p.add_argument("--omega", type=float)
    p.add_argument("--ntrain", "--nbehavior", dest="n_behavior", type=int, help="behavior dataset size N")
    p.add_argument("--ntarget", dest="n_target", type=int, help="target dataset size M")
    p.add_argument("--h", dest="short_h", type=int, help="short horizon")
    p.add_argument("--k", dest="k_folds", type=int, help="cross-fitting folds")
    p.add_argument("--seeds", dest="n_seeds", type=int)
    p.add_argument("--base-seed", dest="base_seed", type=int)
    p.add_argument("--estimators", help="comma-separated estimator ids")
    p.add_argument("--sweep", help="comma-separated sweep values")
    p.add_argument("--eps-b", dest="eps_b", type=float)
    p.add_argument("--eps-e", dest="eps_e", type=float)
    p.add_argument("--on-error", dest="on_error", choices=("raise", "record"))
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")


def _add_compare_parser(sub) -> None:
    p = sub.add_parser("compare", help="t-test estimated returns against behavior returns")
    p.add_argument("--behavior", type=Path, required=True, help="CSV of behavior returns")
    p.add_argument("--estimates", type=Path, required=True, help="CSV of estimated returns")
    p.add_argument("--column", help="column name to read (default: first numeric column)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--paired", action="store_true")
    mode.add_argument("--independent", action="store_true")
    p.add_argument("--welch", action="store_true", help="unequal variances for the independent test")
    p.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    p.add_argument("--alpha", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(sub)
    _add_compare_parser(sub)
    p = sub.add_parser("export-mdp", help="write the default sepsis-like MDP as text")
    p.add_argument("--out", type=Path, required=True)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    kwargs = parse_config_text(args.config.read_text()) if args.config else {}
    for name in (
        "environment", "scenario", "omega", "n_behavior", "n_target", "short_h", "k_folds", "n_seeds",
        "base_seed", "eps_b", "eps_e", "on_error", "workers", "out",
    ):
        value = getattr(args, name)
        if value is not None:
            kwargs[name] = value
    if args.estimators is not None:
        kwargs["estimators"] = _convert("estimators", args.estimators)
    if args.sweep is not None:
        kwargs["sweep"] = _convert("sweep", args.sweep)
    return ExperimentConfig(**kwargs)


def read_column(path: Path, column: Optional[str] = None) -> np.ndarray:
    """Read one numeric column from a CSV file with or without a header row."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path} is empty")
    header = None
    try:
        [float(x) for x in rows[0] if x != ""]
    except ValueError:
        header, rows = rows[0], rows[1:]
    if column is not None:
        if header is None or column not in header:
            raise ValueError(f"{path} has no column {column!r}")
        idx = header.index(column)
    else:
        idx = next((j for j in range(len(rows[0])) if _is_number(rows[0][j])), None)
        if idx is None:
            raise ValueError(f"{path} has no numeric column")
    return np.array([float(r[idx]) for r in rows if r[idx] != ""])


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _cmd_run(args) -> int:
    try:
        config = config_from_args(args)
    except ValueError as exc:
        print(f"bench: invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_experiment(config)
    except BenchError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 1
    if config.out:
        write_report(report, config.out)
    sys.stdout.write(emit_table(report, "markdown"))
    failed = sum(r["status"] != "ok" for r in report.rows)
    print(f"{len(report.rows)} rows, {failed} failed, {report.wall_clock:.1f}s", file=sys.stderr)
    return 0


def _cmd_compare(args) -> int:
    try:
        behavior = read_column(args.behavior, args.column)
        estimates = read_column(args.estimates, args.column)
        if args.paired:
            result = t_test_paired(estimates, behavior, alternative=args.alternative)
        else:
            result = t_test_independent(estimates, behavior, equal_var=not args.welch, alternative=args.alternative)
    except (OSError, ValueError) as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2
    verdict = "reject" if result.reject(args.alpha) else "retain"
    print(f"test={result.kind} t={result.t_statistic:.6g} df={result.degrees_of_freedom:.6g} p={result.p_value:.6g}")
    print(f"{verdict} H0 at alpha={args.alpha}")
    return 0


def _cmd_export(args) -> int:
    from .bench import default_spec
    from .sepsis import export_spec

    args.out.write_text(export_spec(default_spec()))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "compare": _cmd_compare, "export-mdp": _cmd_export}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
