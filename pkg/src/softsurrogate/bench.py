"""Seeded experiment runner for the toy and sepsis-like domains.

Every random draw is keyed by ``(base_seed, seed_index, ...)``: the datasets
of a seed are shared by all estimators, and each estimator draws its own
folds and corruption noise from ``(base_seed, seed_index, estimator_id,
purpose)``.  Removing an estimator from the list therefore leaves the
numbers of the others unchanged.

Toy scenarios map to nuisance choices as follows:

=======================  ==================  ===================================
scenario                 regression features density ratio
=======================  ==================  ===================================
realizable               quadratic           joint histogram
regressor_misspecified   linear              joint histogram
ratio_misspecified       quadratic           histogram, corrupted denominators
noise_sweep              quadratic           joint histogram; sweeps ``omega``
data_size_sweep          quadratic           corrupted; sweeps ``n_behavior``
=======================  ==================  ===================================
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import sepsis, toy
from .data import truncate_dataset
from .density_ratio import BinGrid, ConvergenceError
from .estimators import (
    ESTIMATOR_IDS,
    ActionLeastSquares,
    Corruption,
    HistogramRatio,
    LeastSquaresRegressor,
    TabularRatio,
    TabularRegressor,
    derive_seed,
    estimate_dr,
    estimate_extrapolation,
    estimate_lope,
    estimate_mc,
    estimate_model_based,
    estimate_soft,
    estimate_w_soft,
)
from .regression import LINEAR_FEATURES, QUADRATIC_FEATURES
from .stats import t_test_independent

ENVIRONMENTS = ("toy", "sepsis")
SCENARIOS = ("realizable", "regressor_misspecified", "ratio_misspecified", "noise_sweep", "data_size_sweep")
TOY_ESTIMATORS = ("soft", "w-soft", "dr-soft", "dr-w-soft", "mc")
DEFAULT_SWEEPS = {"noise_sweep": (1.0, 10.0), "data_size_sweep": (500, 1000, 50000)}
ROW_FIELDS = ("setting", "seed", "estimator", "value", "truth", "metric", "p_value", "status", "error")

# Errors a single estimator run may raise on unlucky data; in ``record``
# mode they become failed rows instead of aborting the experiment.
ESTIMATION_ERRORS = (ValueError, ArithmeticError, ConvergenceError, np.linalg.LinAlgError)


class BenchError(RuntimeError):
    """An estimator failed; the message names the seed and estimator."""

    def __init__(self, setting: str, seed: int, estimator: str, cause: Exception):
        super().__init__(f"seed {seed} estimator {estimator} ({setting}): {type(cause).__name__}: {cause}")
        self.setting = setting
        self.seed = seed
        self.estimator = estimator


_ENV_DEFAULTS = {
    "toy": dict(n_seeds=200, n_behavior=5000, n_target=100, short_h=1),
    "sepsis": dict(n_seeds=5, n_behavior=5000, n_target=500, short_h=2),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """What to run.  Fields left as ``None`` take per-environment defaults.

    Parameters
    ----------
    sweep : tuple
        Values for the swept quantity of ``noise_sweep`` (``omega``) or
        ``data_size_sweep`` (``n_behavior``); ignored by other scenarios.
    corruption_units : {"count", "probability"}
        Units in which the ratio-denominator noise is added for
        ``ratio_misspecified`` and ``data_size_sweep``.
    on_error : {"raise", "record"}
        Abort with :class:`BenchError`, or keep going and store failed rows.
    """

    environment: str = "toy"
    estimators: tuple = ("soft", "mc")
    n_seeds: Optional[int] = None
    scenario: str = "realizable"
    n_behavior: Optional[int] = None
    n_target: Optional[int] = None
    short_h: Optional[int] = None
    omega: float = 1.0
    k_folds: int = 2
    base_seed: int = 0
    out: Optional[str] = None
    eps_b: float = 0.15
    eps_e: float = 0.15
    sweep: tuple = ()
    factorized: bool = False
    corruption_units: str = "count"
    intercept: bool = False
    on_error: str = "raise"
    workers: int = 1

    def __post_init__(self):
        if self.environment not in ENVIRONMENTS:
            raise ValueError(f"environment must be one of {ENVIRONMENTS}, got {self.environment!r}")
        estimators = (self.estimators,) if isinstance(self.estimators, str) else tuple(self.estimators)
        object.__setattr__(self, "estimators", estimators)
        allowed = TOY_ESTIMATORS if self.environment == "toy" else ESTIMATOR_IDS
        for e in estimators:
            if e not in allowed:
                raise ValueError(f"unknown estimator {e!r} for {self.environment}; choose from {allowed}")
        if len(set(estimators)) != len(estimators):
            raise ValueError("estimator ids must be unique")
        for key, value in _ENV_DEFAULTS[self.environment].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.n_behavior < 1 or self.n_target < 1:
            raise ValueError("dataset sizes must be >= 1")
        if self.k_folds < 1:
            raise ValueError("k_folds must be >= 1")
        if self.corruption_units not in ("count", "probability"):
            raise ValueError("corruption_units must be 'count' or 'probability'")
        if self.on_error not in ("raise", "record"):
            raise ValueError("on_error must be 'raise' or 'record'")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        sweep = tuple(self.sweep) or DEFAULT_SWEEPS.get(self.scenario, ())
        object.__setattr__(self, "sweep", sweep)

    def settings(self) -> list[tuple[str, dict]]:
        """``(label, overrides)`` for each table column of this experiment."""
        if self.environment == "sepsis":
            return [("sepsis", {})]
        if self.scenario == "noise_sweep":
            return [(f"omega={_fmt_num(v)}", {"omega": float(v)}) for v in self.sweep]
        if self.scenario == "data_size_sweep":
            return [(f"N={int(v)}", {"n_behavior": int(v)}) for v in self.sweep]
        return [(self.scenario, {})]


def _fmt_num(v) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def metrics(self, estimator: str, setting: Optional[str] = None) -> np.ndarray:
        """Successful per-seed metrics for one estimator (first setting by default)."""
        setting = setting or self.config.settings()[0][0]
        return np.array(
            [r["metric"] for r in self.rows if r["estimator"] == estimator and r["setting"] == setting and r["status"] == "ok"]
        )

    def values(self, estimator: str, setting: Optional[str] = None) -> np.ndarray:
        setting = setting or self.config.settings()[0][0]
        return np.array(
            [r["value"] for r in self.rows if r["estimator"] == estimator and r["setting"] == setting and r["status"] == "ok"]
        )

    def rows_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(ROW_FIELDS)
        for r in self.rows:
            writer.writerow([_cell(r[k]) for k in ROW_FIELDS])
        return out.getvalue()


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def summarize(rows: Sequence[dict]) -> dict:
    """Per ``(setting, estimator)`` mean, population std, and counts of the metric."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["setting"], r["estimator"]), []).append(r)
    summary = {}
    for key, group in groups.items():
        ok = np.array([r["metric"] for r in group if r["status"] == "ok"], dtype=float)
        summary[key] = {
            "mean": float(np.mean(ok)) if ok.size else math.nan,
            "std": float(np.std(ok)) if ok.size else math.nan,
            "n": int(ok.size),
            "n_failed": len(group) - int(ok.size),
        }
    return summary


# --------------------------------------------------------------------------
# Toy domain


def toy_nuisances(config: ExperimentConfig):
    misspecified_f = config.scenario == "regressor_misspecified"
    corrupt = config.scenario in ("ratio_misspecified", "data_size_sweep")
    regressor = LeastSquaresRegressor(LINEAR_FEATURES if misspecified_f else QUADRATIC_FEATURES, intercept=config.intercept)
    ratio = HistogramRatio(
        grid=BinGrid(),
        factorized=config.factorized,
        on_uncovered="zero",
        corruption=Corruption(units=config.corruption_units) if corrupt else None,
    )
    return regressor, ratio


def _toy_seed(config: ExperimentConfig, overrides: dict, seed_index: int) -> list[tuple]:
    cfg = toy.ToyConfig(
        n_behavior=overrides.get("n_behavior", config.n_behavior),
        n_target=config.n_target,
        noise_omega=overrides.get("omega", config.omega),
        seed=derive_seed(config.base_seed, seed_index, "data"),
    )
    behavior = toy.sample_behavior(cfg)
    target_labeled, truth = toy.sample_target_labeled(cfg)
    target = target_labeled.unlabeled()
    population = toy.population_target_value(cfg.n_target, cfg.state_noise_sigma)
    regressor, ratio = toy_nuisances(config)
    results = []
    for est_id in config.estimators:
        est_seed = derive_seed(config.base_seed, seed_index, est_id, "estimator")

        def run(est_id=est_id, est_seed=est_seed):
            if est_id == "soft":
                est = estimate_soft(behavior, target, regressor)
            elif est_id == "w-soft":
                est = estimate_w_soft(behavior, target, regressor, ratio, seed=est_seed)
            elif est_id == "mc":
                est = estimate_mc(target_labeled)
            else:
                est = estimate_dr(
                    behavior, target, regressor, ratio, k=config.k_folds, seed=est_seed, weighted=est_id == "dr-w-soft"
                )
            if est.per_trajectory_predictions is not None:
                # Per-trajectory estimators are scored item by item.
                return est.value, population, float(np.mean((est.per_trajectory_predictions - truth) ** 2)), math.nan
            return est.value, population, (est.value - population) ** 2, math.nan

        results.append((est_id, run))
    return results


# --------------------------------------------------------------------------
# Sepsis-like domain


@lru_cache(maxsize=1)
def default_spec() -> sepsis.MdpSpec:
    return sepsis.build_default_spec()


@lru_cache(maxsize=8)
def _sepsis_policies(eps_b: float, eps_e: float):
    spec = default_spec()
    behavior, target = sepsis.default_policies(spec, eps_b, eps_e)
    return behavior, target, sepsis.exact_policy_value(spec, target), sepsis.exact_policy_value(spec, behavior)


def _sepsis_seed(config: ExperimentConfig, overrides: dict, seed_index: int) -> list[tuple]:
    spec = default_spec()
    pi_b, pi_e, v_exact, _ = _sepsis_policies(config.eps_b, config.eps_e)
    h = config.short_h
    behavior = sepsis.rollout(
        spec, pi_b, config.n_behavior, h_record=h, seed=derive_seed(config.base_seed, seed_index, "behavior")
    )
    target_full = sepsis.rollout(spec, pi_e, config.n_target, seed=derive_seed(config.base_seed, seed_index, "target"))
    target = truncate_dataset(target_full, h).unlabeled()
    regressor = TabularRegressor(sepsis.surrogate_keys)
    ratio = TabularRatio(sepsis.surrogate_keys, on_uncovered="zero")
    results = []
    for est_id in config.estimators:
        est_seed = derive_seed(config.base_seed, seed_index, est_id, "estimator")

        def run(est_id=est_id, est_seed=est_seed):
            if est_id == "soft":
                est = estimate_soft(behavior, target, regressor)
            elif est_id == "w-soft":
                est = estimate_w_soft(behavior, target, regressor, ratio, seed=est_seed)
            elif est_id in ("dr-soft", "dr-w-soft"):
                est = estimate_dr(
                    behavior, target, regressor, ratio, k=config.k_folds, seed=est_seed, weighted=est_id == "dr-w-soft"
                )
            elif est_id == "lope":
                est = estimate_lope(
                    behavior,
                    target,
                    ActionLeastSquares(sepsis.SURROGATE_FEATURES, intercept=False),
                    ratio,
                    sepsis.policy_action_probs(pi_e),
                    seed=est_seed,
                )
            elif est_id == "model-based":
                est = estimate_model_based(
                    target, spec.horizon, spec.discount, spec.n_states, pi_e.probs, spec.reward, spec.terminal
                )
            elif est_id == "mc":
                est = estimate_mc(target_full)
            else:
                mode = "average" if est_id == "extrap-avg" else "last"
                est = estimate_extrapolation(target, mode, spec.horizon, spec.discount)
            outcomes = est.per_trajectory_predictions if est.per_trajectory_predictions is not None else est.pseudo_outcomes
            p_value = math.nan
            if outcomes is not None and np.ptp(outcomes) + np.ptp(behavior.returns) > 0:
                p_value = t_test_independent(outcomes, behavior.returns).p_value
            return est.value, v_exact, (est.value - v_exact) ** 2, p_value

        results.append((est_id, run))
    return results


# --------------------------------------------------------------------------
# Runner


def _run_seed(task) -> list[dict]:
    config, label, overrides, seed_index = task
    build = _toy_seed if config.environment == "toy" else _sepsis_seed
    rows = []
    for est_id, run in build(config, overrides, seed_index):
        row = dict(setting=label, seed=seed_index, estimator=est_id, error="")
        try:
            value, truth, metric, p_value = run()
            row.update(value=float(value), truth=float(truth), metric=float(metric), p_value=float(p_value), status="ok")
        except ESTIMATION_ERRORS as exc:
            if config.on_error == "raise":
                raise BenchError(label, seed_index, est_id, exc) from exc
            row.update(
                value=math.nan, truth=math.nan, metric=math.nan, p_value=math.nan, status="failed",
                error=f"{type(exc).__name__}: {exc}",
            )
        rows.append(row)
    return rows


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run every seed of every setting and aggregate the metric per estimator.

    Toy metric: per-trajectory mean squared error against the noiseless
    returns for estimators with per-trajectory predictions (soft, w-soft,
    mc), and ``(V_hat - V)^2`` against the population target value for the
    cross-fitted estimators.  Sepsis metric: ``(V_hat - V_exact)^2``.

    Raises
    ------
    BenchError
        If an estimator fails and ``config.on_error == "raise"``.
    """
    start = time.perf_counter()
    tasks = [(config, label, overrides, i) for label, overrides in config.settings() for i in range(config.n_seeds)]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(_run_seed, tasks))
    else:
        chunks = [_run_seed(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    metadata = {k: v for k, v in asdict(config).items() if k not in ("out", "workers")}
    if config.environment == "sepsis":
        _, _, v_e, v_b = _sepsis_policies(config.eps_b, config.eps_e)
        metadata.update(exact_target_value=v_e, exact_behavior_value=v_b)
    return ExperimentReport(config, rows, summarize(rows), metadata, time.perf_counter() - start)


def format_cell(mean: float, std: float) -> str:
    """``mean (std)`` to three decimals, e.g. ``0.002 (0.003)``."""
    if math.isnan(mean):
        return "n/a"
    return f"{mean:.3f} ({std:.3f})"


def _table(report: ExperimentReport) -> tuple[list[str], list[list[str]]]:
    labels = [label for label, _ in report.config.settings()]
    header = ["estimator", *labels]
    body = []
    for est in report.config.estimators:
        cells = []
        for label in labels:
            s = report.summary.get((label, est))
            cells.append("n/a" if s is None else format_cell(s["mean"], s["std"]))
        body.append([est, *cells])
    return header, body


def emit_table(report: ExperimentReport, format: str = "markdown") -> str:
    """Render the summary as one row per estimator and one column per setting.

    Both formats are built from the same formatted cells.
    """
    header, body = _table(report)
    if format == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body)
        return out.getvalue()
    if format == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in body]
        return "\n".join(lines) + "\n"
    raise ValueError(f"format must be 'csv' or 'markdown', got {format!r}")


def write_report(report: ExperimentReport, out_dir) -> None:
    """Write ``rows.csv``, ``summary.csv`` and ``summary.md`` into ``out_dir``."""
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / "rows.csv").write_text(report.rows_csv())
    (path / "summary.csv").write_text(emit_table(report, "csv"))
    (path / "summary.md").write_text(emit_table(report, "markdown"))

