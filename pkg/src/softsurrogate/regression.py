"""Nuisance regressors mapping a trajectory prefix to its expected return.

Two model families are provided: :class:`LinearModel`, a linear-in-features
least-squares fit with optional per-item weights, and :class:`TabularModel`,
a lookup of empirical mean returns keyed by a discrete summary of the
prefix.  Both expose ``predict_dataset`` for vectorized use and work with
the module-level :func:`predict` for single prefixes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Optional

import numpy as np

from .data import BehaviorDataset, TargetDataset, Trajectory, target_from_items

RIDGE = 1e-10
# Smallest eigenvalue of the (scaled) Gram matrix, relative to the largest,
# below which the design is reported as rank deficient.
RANK_TOL = 1e-12


class RankDeficientError(ValueError):
    """Raised when the design matrix of a least-squares fit is singular."""


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A deterministic map from dataset prefixes to a fixed-width design.

    Parameters
    ----------
    name : str
        Identifier recorded in model dumps.
    arity : int or None
        Number of states per prefix (``h + 1``) the map accepts, or ``None``
        to accept any horizon.
    dim : int
        Width of the returned design.
    fn : callable
        ``fn(dataset) -> ndarray`` of shape ``(len(dataset), dim)``.
    """

    name: str
    arity: Optional[int]
    dim: int
    fn: Callable[[TargetDataset], np.ndarray]

    def apply(self, data: TargetDataset) -> np.ndarray:
        if self.arity is not None and data.horizon_h + 1 != self.arity:
            raise ValueError(
                f"feature map {self.name!r} expects {self.arity} states per prefix, "
                f"got {data.horizon_h + 1}"
            )
        X = np.asarray(self.fn(data), dtype=float)
        if X.shape != (data.size, self.dim):
            raise ValueError(
                f"feature map {self.name!r} produced shape {X.shape}, expected {(data.size, self.dim)}"
            )
        return X

    def apply_prefix(self, prefix: Trajectory) -> np.ndarray:
        return self.apply(target_from_items([prefix]))[0]


def _toy_columns(data: TargetDataset):
    return data.states[:, 0, 0], data.states[:, 1, 0]


QUADRATIC_FEATURES = FeatureMap(
    "quadratic",
    2,
    3,
    lambda d: np.column_stack([_toy_columns(d)[0], _toy_columns(d)[1], _toy_columns(d)[1] ** 2]),
)
LINEAR_FEATURES = FeatureMap("linear", 2, 2, lambda d: np.column_stack(_toy_columns(d)))


@dataclass(frozen=True, eq=False)
class LinearModel:
    features: FeatureMap
    coefficients: np.ndarray
    intercept: float = 0.0

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if coef.size != self.features.dim:
            raise ValueError(f"{coef.size} coefficients for a {self.features.dim}-dim feature map")
        if not np.all(np.isfinite(coef)) or not np.isfinite(self.intercept):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", coef)

    def predict_dataset(self, data: TargetDataset) -> np.ndarray:
        return self.features.apply(data) @ self.coefficients + self.intercept

    def dump(self) -> str:
        coefs = " ".join(repr(float(c)) for c in self.coefficients)
        return f"features={self.features.name}\nintercept={self.intercept!r}\ncoefficients={coefs}\n"


@dataclass(frozen=True, eq=False)
class TabularModel:
    table: dict
    default: float
    key_fn: Callable[[TargetDataset], list] = field(repr=False, default=None)

    def __post_init__(self):
        for key, (_, count) in self.table.items():
            if count < 1:
                raise ValueError(f"key {key!r} has count {count}")

    def lookup(self, key: Hashable) -> float:
        entry = self.table.get(key)
        return self.default if entry is None else entry[0]

    def predict_dataset(self, data: TargetDataset) -> np.ndarray:
        return np.array([self.lookup(k) for k in self.key_fn(data)], dtype=float)

    def dump(self) -> str:
        lines = [f"default={float(self.default)!r}"]
        lines += [f"{k!r}={float(m)!r} ({c})" for k, (m, c) in sorted(self.table.items(), key=lambda kv: repr(kv[0]))]
        return "\n".join(lines) + "\n"


def fit_least_squares(
    data: BehaviorDataset,
    features: FeatureMap,
    weights: Optional[np.ndarray] = None,
    intercept: bool = True,
) -> LinearModel:
    """Weighted least squares of the return on prefix features.

    Minimizes ``sum_i w_i (theta @ phi(tau_i) + b - G_i)^2`` through the
    normal equations with a ``1e-10`` ridge, solved by Cholesky.  Columns are
    scaled to unit weighted RMS first so the ridge and the rank check are
    insensitive to feature units.

    Raises
    ------
    ValueError
        On negative or non-finite weights, a zero weight sum, or too few
        items for the design width.
    RankDeficientError
        When the design does not have full column rank.
    """
    X = features.apply(data)
    if intercept:
        X = np.column_stack([X, np.ones(data.size)])
    p = X.shape[1]
    if data.size < p:
        raise ValueError(f"need at least {p} items to fit {p} parameters, got {data.size}")
    if weights is None:
        w = np.ones(data.size)
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape != (data.size,):
            raise ValueError(f"{w.size} weights for {data.size} items")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if w.sum() <= 0:
            raise ValueError("weights must have a positive sum")
    y = data.returns
    scale = np.sqrt((w @ X**2) / w.sum())
    scale[scale == 0] = 1.0
    Xs = X / scale
    gram = Xs.T @ (Xs * w[:, None]) / w.sum()
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= RANK_TOL * max(eig[-1], 1.0):
        raise RankDeficientError(
            f"design from feature basis {features.name!r} (intercept={intercept}) is rank deficient"
        )
    rhs = Xs.T @ (w * y) / w.sum()
    chol = np.linalg.cholesky(gram + RIDGE * np.eye(p))
    theta = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs)) / scale
    if intercept:
        return LinearModel(features, theta[:-1], float(theta[-1]))
    return LinearModel(features, theta, 0.0)


def fit_tabular(data: BehaviorDataset, key_fn: Callable[[TargetDataset], list]) -> TabularModel:
    """Per-key empirical mean of the return, defaulting to the global mean."""
    keys = key_fn(data)
    sums: dict = {}
    for key, g in zip(keys, data.returns):
        total, count = sums.get(key, (0.0, 0))
        sums[key] = (total + g, count + 1)
    table = {k: (total / count, count) for k, (total, count) in sums.items()}
    return TabularModel(table, float(np.mean(data.returns)), key_fn)


def predict(model, prefix: Trajectory) -> float:
    """Prediction of ``model`` for a single prefix."""
    return float(model.predict_dataset(target_from_items([prefix]))[0])
