"""Finite-sample error bound and bias identity for the doubly robust estimator.

The bound on ``|V_dr - V|`` that holds with probability ``1 - delta`` is a
sum of seven terms.  With ``L = log(4K / delta)``:

1. ``sqrt(2 Var_e[f] L / M)``
2. ``sqrt(2 E_b[h^2 (G - f)^2] L / N)``
3. ``(1/K) sum_k eps_b^(k) eps_h^(k)``
4. ``2 H K L / M``
5. ``max_k eps_e^(k) sqrt(2 K L / M)``
6. ``4 C1 C2 H K L / N``
7. ``3 C1 H max_k (eps_b^(k) + eps_h^(k)) sqrt(2 K L / N)``

where ``eps_e`` and ``eps_b`` are root-mean-square regression errors under
the target and behavior prefix laws, ``eps_h`` the root-mean-square ratio
error under the behavior law, ``|G|, |f| <= C1 H`` and ``h <= C2``.

The bias of the cross-fitted estimator given its nuisances is

    (1/K) sum_k E_e[ Delta_k(tau) (1 - delta_k(tau)) ]

with ``Delta_k = f_k - f`` and ``delta_k = h_k / h``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .density_ratio import CoverageError

TERM_NAMES = tuple(f"term_{i}" for i in range(1, 8))


@dataclass(frozen=True)
class BoundInputs:
    var_target: float
    second_moment_b: float
    eps_e: Sequence[float]
    eps_b: Sequence[float]
    eps_h: Sequence[float]
    n: int
    m: int
    k: int
    delta: float
    horizon_H: float
    c1: float
    c2: float

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.n < 1 or self.m < 1 or self.k < 1:
            raise ValueError("n, m and k must be positive")
        for name in ("eps_e", "eps_b", "eps_h"):
            vals = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if vals.size != self.k:
                raise ValueError(f"{name} needs one entry per fold")
            if np.any(vals < 0):
                raise ValueError(f"{name} must be nonnegative")
            object.__setattr__(self, name, vals)
        for name in ("var_target", "second_moment_b", "horizon_H", "c1", "c2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class BoundBreakdown:
    terms: tuple
    total: float

    def as_dict(self) -> dict:
        out = dict(zip(TERM_NAMES, self.terms))
        out["total"] = self.total
        return out


def evaluate_bound(inputs: BoundInputs) -> BoundBreakdown:
    """The seven bound terms and their sum (vectorized path)."""
    k, n, m, H = inputs.k, inputs.n, inputs.m, inputs.horizon_H
    log_term = np.log(4.0 * k / inputs.delta)
    terms = (
        np.sqrt(2.0 * inputs.var_target * log_term / m),
        np.sqrt(2.0 * inputs.second_moment_b * log_term / n),
        np.mean(inputs.eps_b * inputs.eps_h),
        2.0 * H * k * log_term / m,
        np.max(inputs.eps_e) * np.sqrt(2.0 * k * log_term / m),
        4.0 * inputs.c1 * inputs.c2 * H * k * log_term / n,
        3.0 * inputs.c1 * H * np.max(inputs.eps_b + inputs.eps_h) * np.sqrt(2.0 * k * log_term / n),
    )
    terms = tuple(float(t) for t in terms)
    return BoundBreakdown(terms, float(np.sum(terms)))


def evaluate_bound_reference(inputs: BoundInputs) -> BoundBreakdown:
    """Scalar recomputation of :func:`evaluate_bound` for cross-checking."""
    K = inputs.k
    L = math.log(4 * K) - math.log(inputs.delta)
    eps_e = [float(x) for x in inputs.eps_e]
    eps_b = [float(x) for x in inputs.eps_b]
    eps_h = [float(x) for x in inputs.eps_h]
    root_m = math.sqrt(2 * K * L / inputs.m)
    root_n = math.sqrt(2 * K * L / inputs.n)
    t1 = math.sqrt(2 * L * inputs.var_target / inputs.m)
    t2 = math.sqrt(2 * L * inputs.second_moment_b / inputs.n)
    t3 = math.fsum(b * h for b, h in zip(eps_b, eps_h)) / K
    t4 = 2 * inputs.horizon_H * K * L / inputs.m
    t5 = max(eps_e) * root_m
    t6 = 4 * inputs.c1 * inputs.c2 * inputs.horizon_H * K * L / inputs.n
    t7 = 3 * inputs.c1 * inputs.horizon_H * max(b + h for b, h in zip(eps_b, eps_h)) * root_n
    terms = (t1, t2, t3, t4, t5, t6, t7)
    return BoundBreakdown(terms, math.fsum(terms))


# --------------------------------------------------------------------------
# Bias identity


@dataclass(frozen=True)
class BiasOracleInputs:
    """Exact target law over enumerated prefixes with per-fold nuisance errors.

    ``delta_f[k, j]`` is ``f_k - f`` and ``ratio_rel[k, j]`` is ``h_k / h`` at
    prefix ``j``; ``target_probs[j]`` is its probability under the target.
    """

    target_probs: np.ndarray
    delta_f: np.ndarray
    ratio_rel: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.target_probs, dtype=float)
        d = np.atleast_2d(np.asarray(self.delta_f, dtype=float))
        r = np.atleast_2d(np.asarray(self.ratio_rel, dtype=float))
        if d.shape != r.shape or d.shape[1] != p.size:
            raise ValueError("delta_f and ratio_rel need shape (K, n_prefixes)")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("target_probs must be a probability vector")
        object.__setattr__(self, "target_probs", p)
        object.__setattr__(self, "delta_f", d)
        object.__setattr__(self, "ratio_rel", r)

    @classmethod
    def from_nuisances(
        cls,
        target_probs: np.ndarray,
        behavior_probs: np.ndarray,
        true_f: np.ndarray,
        fitted_f: Sequence[np.ndarray],
        fitted_h: Sequence[np.ndarray],
    ) -> "BiasOracleInputs":
        """Build inputs from fitted per-fold nuisances on enumerated prefixes.

        Raises
        ------
        CoverageError
            If a prefix with positive target probability has zero behavior
            probability, so the true ratio is undefined there.
        """
        pe = np.asarray(target_probs, dtype=float)
        pb = np.asarray(behavior_probs, dtype=float)
        bad = np.flatnonzero((pe > 0) & (pb <= 0))
        if bad.size:
            raise CoverageError(f"prefix {int(bad[0])} has target mass but no behavior mass")
        h = np.where(pe > 0, pe / np.where(pb > 0, pb, 1.0), 0.0)
        safe_h = np.where(h > 0, h, 1.0)
        delta_f = np.array([np.asarray(f, dtype=float) - true_f for f in fitted_f])
        ratio_rel = np.array([np.where(h > 0, np.asarray(r, dtype=float) / safe_h, 1.0) for r in fitted_h])
        return cls(pe, delta_f, ratio_rel)


def product_bias(inputs: BiasOracleInputs) -> float:
    """``(1/K) sum_k E_e[Delta_k (1 - delta_k)]`` by exact enumeration."""
    per_fold = (inputs.delta_f * (1.0 - inputs.ratio_rel)) @ inputs.target_probs
    return float(np.mean(per_fold))


# --------------------------------------------------------------------------
# Empirical coverage on the toy domain


@dataclass(frozen=True)
class CoverageRow:
    seed: int
    bound: BoundBreakdown
    empirical_error: float

    @property
    def covered(self) -> bool:
        return self.empirical_error <= self.bound.total


@dataclass(frozen=True)
class CoverageReport:
    rows: list = field(default_factory=list)
    delta: float = 0.05

    @property
    def coverage(self) -> float:
        return float(np.mean([r.covered for r in self.rows]))

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["seed", *TERM_NAMES, "total", "empirical_error", "covered"])
        for r in self.rows:
            writer.writerow(
                [r.seed, *(repr(t) for t in r.bound.terms), repr(r.bound.total), repr(r.empirical_error), int(r.covered)]
            )
        return out.getvalue()


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def empirical_bound_coverage(
    toy_config,
    nuisance_config,
    n_seeds: int,
    delta: float,
    k: int = 2,
    oracle_size: int = 100_000,
    headroom: float = 1.1,
) -> CoverageReport:
    """Fraction of seeds whose DR error is within the evaluated bound.

    Parameters
    ----------
    toy_config : ToyConfig
        Data sizes and noise; the seed field is replaced per run.
    nuisance_config : tuple
        ``(regressor_fitter, ratio_fitter)`` passed to the DR estimator.

    For each seed the per-fold errors ``eps_e``, ``eps_b``, ``eps_h`` and the
    variance terms are measured on fresh samples of size ``oracle_size``
    against the analytic regression function and density ratio.  ``C1`` and
    ``C2`` are the largest magnitudes seen (returns, fitted and true
    regression values; fitted and true ratios) times ``headroom``, with
    horizon ``H = 1``.
    """
    from dataclasses import replace

    from . import toy
    from .estimators import derive_seed, estimate_dr

    regressor, ratio = nuisance_config
    sigma = toy_config.state_noise_sigma
    truth = toy.population_target_value(toy_config.n_target, sigma)
    rows = []
    for seed in range(n_seeds):
        cfg = replace(toy_config, seed=derive_seed(seed, "coverage-data"))
        behavior = toy.sample_behavior(cfg)
        target, _ = toy.sample_target(cfg)
        est = estimate_dr(behavior, target, regressor, ratio, k=k, seed=seed)
        fresh = replace(
            toy_config, n_behavior=oracle_size, n_target=oracle_size, seed=derive_seed(seed, "coverage-oracle")
        )
        fb = toy.sample_behavior(fresh)
        fe, _ = toy.sample_target(fresh)
        f_b = toy.true_return(fb.states[:, 0, 0], fb.states[:, 1, 0])
        f_e = toy.true_return(fe.states[:, 0, 0], fe.states[:, 1, 0])
        h_b = toy.oracle_ratio(fb.states[:, 0, 0], fb.states[:, 1, 0], sigma)
        eps_e, eps_b, eps_h, fit_max, ratio_max = [], [], [], [], []
        for reg_model, ratio_model in est.fold_models:
            pred_b, pred_e = reg_model.predict_dataset(fb), reg_model.predict_dataset(fe)
            hhat_b = ratio_model.ratio_dataset(fb)
            eps_e.append(_rms(pred_e - f_e))
            eps_b.append(_rms(pred_b - f_b))
            eps_h.append(_rms(hhat_b - h_b))
            fit_max.append(max(np.abs(pred_b).max(), np.abs(pred_e).max()))
            ratio_max.append(hhat_b.max())
        c1 = headroom * max(np.abs(fb.returns).max(), np.abs(f_b).max(), np.abs(f_e).max(), max(fit_max))
        c2 = headroom * max(h_b.max(), max(ratio_max))
        inputs = BoundInputs(
            var_target=float(np.var(f_e)),
            second_moment_b=float(np.mean(h_b**2 * (fb.returns - f_b) ** 2)),
            eps_e=eps_e,
            eps_b=eps_b,
            eps_h=eps_h,
            n=behavior.size,
            m=target.size,
            k=k,
            delta=delta,
            horizon_H=1.0,
            c1=c1,
            c2=c2,
        )
        rows.append(CoverageRow(seed, evaluate_bound(inputs), abs(est.value - truth)))
    return CoverageReport(rows, delta)
