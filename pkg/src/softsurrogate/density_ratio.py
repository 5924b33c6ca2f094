"""Estimates of the prefix density ratio p(tau | target) / p(tau | behavior).

Three estimators share one fitted type, :class:`DensityRatioModel`:

* histogram ratios over a fixed grid of the toy state ``(s0, s1)``, either on
  the joint grid or as a product of per-dimension marginal ratios;
* tabular ratios keyed by a discrete summary of the prefix;
* a logistic classifier whose odds, corrected by the class prior, give the
  ratio.

Every ratio is clipped to ``[0, clip_max]``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import BehaviorDataset, TargetDataset, Trajectory, target_from_items
from .regression import FeatureMap

DEFAULT_CLIP = 100.0
DIAGNOSTIC_BAND = (0.8, 1.2)


class CoverageError(ValueError):
    """A target prefix falls where the behavior data has no support."""


class ConvergenceError(RuntimeError):
    """Gradient descent hit its iteration cap before converging."""


@dataclass(frozen=True)
class BinGrid:
    bins: tuple = (50, 50)
    ranges: tuple = ((-0.5, 2.0), (-0.5, 2.0))

    def __post_init__(self):
        if len(self.bins) != len(self.ranges):
            raise ValueError("bins and ranges need one entry per dimension")
        for b, (lo, hi) in zip(self.bins, self.ranges):
            if b < 1:
                raise ValueError("bin counts must be >= 1")
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ValueError(f"invalid range ({lo}, {hi})")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.bins))

    def dim_index(self, values: np.ndarray, dim: int) -> np.ndarray:
        """Bin index per value along ``dim``; out-of-range values go to the edge bins."""
        lo, hi = self.ranges[dim]
        b = self.bins[dim]
        idx = np.floor((np.asarray(values, dtype=float) - lo) / (hi - lo) * b).astype(int)
        return np.clip(idx, 0, b - 1)

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        idx = [self.dim_index(points[:, d], d) for d in range(len(self.bins))]
        return np.ravel_multi_index(idx, self.bins)


def toy_points(data: TargetDataset) -> np.ndarray:
    """The ``(s0, s1)`` coordinates of each toy prefix."""
    return data.states[:, :, 0]


@dataclass(frozen=True, eq=False)
class DensityRatioModel:
    """A fitted density-ratio estimate.

    For the histogram and tabular kinds ``numerator`` and ``denominator`` hold
    the per-cell target and behavior probabilities, ``ratios`` the clipped
    cell ratios and ``count_e`` / ``count_b`` the raw counts.  ``index_fn``
    maps a dataset to cell indices.  For the classifier kind ``score_fn``
    maps a dataset to unclipped ratios.
    """

    kind: str
    clip_max: float
    n_behavior: int
    n_target: int
    ratios: Optional[np.ndarray] = None
    numerator: Optional[np.ndarray] = None
    denominator: Optional[np.ndarray] = None
    count_b: Optional[np.ndarray] = None
    count_e: Optional[np.ndarray] = None
    index_fn: Optional[Callable[[TargetDataset], np.ndarray]] = field(default=None, repr=False)
    score_fn: Optional[Callable[[TargetDataset], np.ndarray]] = field(default=None, repr=False)
    grid: Optional[BinGrid] = None
    keys: Optional[list] = None
    factorized: bool = False

    def ratio_dataset(self, data: TargetDataset) -> np.ndarray:
        if self.score_fn is not None:
            r = self.score_fn(data)
        else:
            r = self.ratios[self.index_fn(data)]
        return np.clip(r, 0.0, self.clip_max)

    def ratio_of(self, prefix: Trajectory) -> float:
        return float(self.ratio_dataset(target_from_items([prefix]))[0])

    def with_denominator(self, denominator: np.ndarray) -> "DensityRatioModel":
        """Copy of this model with per-cell denominators replaced."""
        if self.denominator is None:
            raise TypeError(f"a {self.kind} model has no per-cell denominators")
        denominator = np.asarray(denominator, dtype=float)
        return DensityRatioModel(
            kind=self.kind,
            clip_max=self.clip_max,
            n_behavior=self.n_behavior,
            n_target=self.n_target,
            ratios=_cell_ratios(self.numerator, denominator, self.clip_max),
            numerator=self.numerator,
            denominator=denominator,
            count_b=self.count_b,
            count_e=self.count_e,
            index_fn=self.index_fn,
            grid=self.grid,
            keys=self.keys,
            factorized=self.factorized,
        )


def _cell_ratios(num: np.ndarray, den: np.ndarray, clip_max: float) -> np.ndarray:
    safe = np.where(den > 0, den, 1.0)
    return np.clip(np.where(den > 0, num / safe, 0.0), 0.0, clip_max)


def _check_coverage(den: np.ndarray, cells_e: np.ndarray, labels: Callable[[int], str]) -> None:
    bad = np.flatnonzero(den[cells_e] <= 0)
    if bad.size:
        raise CoverageError(
            f"target prefix {int(bad[0])} lies in {labels(int(cells_e[bad[0]]))} "
            "with no behavior support"
        )


def fit_histogram_ratio(
    behavior: TargetDataset,
    target: TargetDataset,
    grid: BinGrid = BinGrid(),
    clip_max: float = DEFAULT_CLIP,
    factorized: bool = False,
    on_uncovered: str = "raise",
    points: Callable[[TargetDataset], np.ndarray] = toy_points,
) -> DensityRatioModel:
    """Histogram ratio ``(count_e / M) / (count_b / N)`` per grid cell.

    Parameters
    ----------
    factorized : bool
        If true, each cell's probabilities are the products of per-dimension
        marginal histogram probabilities instead of joint cell frequencies.
        This smooths the estimate when the joint grid is sparse.
    on_uncovered : {"raise", "zero"}
        What to do when a target prefix falls in a cell with zero behavior
        probability: raise :class:`CoverageError` or give the cell ratio 0.
    """
    if on_uncovered not in ("raise", "zero"):
        raise ValueError(f"on_uncovered must be 'raise' or 'zero', got {on_uncovered!r}")
    n, m = behavior.size, target.size
    pb, pe = points(behavior), points(target)
    cells_b, cells_e = grid.cell_index(pb), grid.cell_index(pe)
    count_b = np.bincount(cells_b, minlength=grid.n_cells)
    count_e = np.bincount(cells_e, minlength=grid.n_cells)
    if factorized:
        den = np.ones(1)
        num = np.ones(1)
        for d, b in enumerate(grid.bins):
            den = np.multiply.outer(den, np.bincount(grid.dim_index(pb[:, d], d), minlength=b) / n)
            num = np.multiply.outer(num, np.bincount(grid.dim_index(pe[:, d], d), minlength=b) / m)
        den, num = den.reshape(-1), num.reshape(-1)
    else:
        den, num = count_b / n, count_e / m
    if on_uncovered == "raise":
        _check_coverage(den, cells_e, lambda c: f"bin {np.unravel_index(c, grid.bins)}")
    return DensityRatioModel(
        kind="histogram",
        clip_max=clip_max,
        n_behavior=n,
        n_target=m,
        ratios=_cell_ratios(num, den, clip_max),
        numerator=num,
        denominator=den,
        count_b=count_b,
        count_e=count_e,
        index_fn=lambda data: grid.cell_index(points(data)),
        grid=grid,
        factorized=factorized,
    )


def fit_tabular_ratio(
    behavior: TargetDataset,
    target: TargetDataset,
    key_fn: Callable[[TargetDataset], list],
    clip_max: float = DEFAULT_CLIP,
    on_uncovered: str = "raise",
) -> DensityRatioModel:
    """Frequency ratio keyed by exact prefix identity (or any discrete key)."""
    if on_uncovered not in ("raise", "zero"):
        raise ValueError(f"on_uncovered must be 'raise' or 'zero', got {on_uncovered!r}")
    keys_b, keys_e = key_fn(behavior), key_fn(target)
    index = {}
    for key in list(keys_b) + list(keys_e):
        index.setdefault(key, len(index))
    cells_b = np.array([index[k] for k in keys_b], dtype=int)
    cells_e = np.array([index[k] for k in keys_e], dtype=int)
    count_b = np.bincount(cells_b, minlength=len(index) + 1)
    count_e = np.bincount(cells_e, minlength=len(index) + 1)
    den, num = count_b / behavior.size, count_e / target.size
    keys = list(index)
    if on_uncovered == "raise":
        _check_coverage(den, cells_e, lambda c: f"key {keys[c]!r}")
    unseen = len(index)  # extra cell with zero counts for keys seen in neither dataset

    def index_fn(data):
        return np.array([index.get(k, unseen) for k in key_fn(data)], dtype=int)

    return DensityRatioModel(
        kind="tabular",
        clip_max=clip_max,
        n_behavior=behavior.size,
        n_target=target.size,
        ratios=_cell_ratios(num, den, clip_max),
        numerator=num,
        denominator=den,
        count_b=count_b,
        count_e=count_e,
        index_fn=index_fn,
        keys=keys,
    )


def fit_classifier_ratio(
    behavior: TargetDataset,
    target: TargetDataset,
    features: FeatureMap,
    clip_max: float = DEFAULT_CLIP,
    step_size: float = 1.0,
    max_iter: int = 10_000,
    tol: float = 1e-8,
) -> DensityRatioModel:
    """Logistic-regression ratio ``(p / (1 - p)) * (N / M)``.

    The classifier separates behavior (label 0) from target (label 1)
    prefixes.  Features are standardized and an intercept is added; the
    mean log-loss is minimized by fixed-step gradient descent.

    Raises
    ------
    ConvergenceError
        If the gradient norm is still above ``tol`` after ``max_iter`` steps.
        Perfectly separable data never converges; in that case the caller can
        catch the error and read ``err.model``, whose ratios saturate at the
        clip bounds.
    """
    n, m = behavior.size, target.size
    X = np.vstack([features.apply(behavior), features.apply(target)])
    y = np.concatenate([np.zeros(n), np.ones(m)])
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = np.column_stack([(X - mu) / sd, np.ones(len(y))])
    beta = np.zeros(Z.shape[1])
    beta[-1] = np.log(m / n)
    grad_norm = np.inf
    for _ in range(max_iter):
        p = _sigmoid(Z @ beta)
        grad = Z.T @ (p - y) / len(y)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            break
        beta -= step_size * grad

    def score_fn(data):
        logit = np.column_stack([(features.apply(data) - mu) / sd, np.ones(data.size)]) @ beta
        return np.exp(np.clip(logit, -700, 700)) * (n / m)

    model = DensityRatioModel(
        kind="classifier", clip_max=clip_max, n_behavior=n, n_target=m, score_fn=score_fn
    )
    if grad_norm >= tol:
        err = ConvergenceError(
            f"logistic ratio did not converge in {max_iter} iterations (gradient norm {grad_norm:.3e})"
        )
        err.model = model
        raise err
    return model


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class WeightDiagnostic:
    mean_weight: float
    flagged: bool


def mean_weight_diagnostic(model, behavior: TargetDataset, band=DIAGNOSTIC_BAND) -> WeightDiagnostic:
    """Mean ratio over behavior data, which should be close to one."""
    mean = float(np.mean(model.ratio_dataset(behavior)))
    return WeightDiagnostic(mean, not (band[0] <= mean <= band[1]))


def dump_histogram(model: DensityRatioModel) -> str:
    """CSV audit of a 2-D histogram model, one row per cell."""
    if model.kind != "histogram" or len(model.grid.bins) != 2:
        raise TypeError("histogram dump needs a 2-D histogram model")
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["bin_index_s0", "bin_index_s1", "count_b", "count_e", "ratio"])
    for cell in range(model.grid.n_cells):
        i, j = np.unravel_index(cell, model.grid.bins)
        writer.writerow(
            [int(i), int(j), int(model.count_b[cell]), int(model.count_e[cell]), repr(float(model.ratios[cell]))]
        )
    return out.getvalue()
