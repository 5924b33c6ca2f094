"""Policy-value estimators and baselines.

Nuisance models are supplied through small fitter objects so that learned,
oracle and deliberately perturbed nuisances plug into the same code path:

* a *regressor fitter* has ``fit(behavior, weights=None)`` returning a model
  with ``predict_dataset(data) -> ndarray``;
* a *ratio fitter* has ``fit(behavior, target, seed)`` returning a model with
  ``ratio_dataset(data) -> ndarray``.

The doubly robust estimator cross-fits both nuisances: for fold ``k`` they are
trained on the complements of fold ``k`` in both datasets and evaluated on
fold ``k``, and the final value averages the per-fold values.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import BehaviorDataset, FoldPlan, TargetDataset, discounted_return, make_fold_plan
from .density_ratio import (
    DEFAULT_CLIP,
    BinGrid,
    fit_classifier_ratio,
    fit_histogram_ratio,
    fit_tabular_ratio,
    toy_points,
)
from .regression import FeatureMap, LinearModel, fit_least_squares, fit_tabular

ESTIMATOR_IDS = (
    "soft",
    "w-soft",
    "dr-soft",
    "dr-w-soft",
    "lope",
    "model-based",
    "extrap-avg",
    "extrap-last",
    "mc",
)


@dataclass(frozen=True, eq=False)
class ValueEstimate:
    """A scalar value estimate with its supporting detail.

    ``per_trajectory_predictions`` holds one prediction per target prefix
    for regression-style estimators; ``pseudo_outcomes`` holds per-item
    terms whose mean is the estimate, for use in significance tests.
    """

    value: float
    estimator_id: str
    per_fold_values: Optional[np.ndarray] = None
    per_trajectory_predictions: Optional[np.ndarray] = None
    pseudo_outcomes: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)
    fold_models: Optional[tuple] = None


def _seed_for(seed: int, *parts) -> np.random.SeedSequence:
    words = [int(seed)] + [zlib.crc32(str(p).encode()) for p in parts]
    return np.random.SeedSequence(words)


def derive_seed(seed: int, *parts) -> int:
    """A 63-bit integer seed derived from ``seed`` and labels."""
    return int(_seed_for(seed, *parts).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


# --------------------------------------------------------------------------
# Regressor fitters


@dataclass(frozen=True)
class LeastSquaresRegressor:
    features: FeatureMap
    intercept: bool = True

    def fit(self, behavior: BehaviorDataset, weights=None) -> LinearModel:
        return fit_least_squares(behavior, self.features, weights, self.intercept)


@dataclass(frozen=True)
class TabularRegressor:
    key_fn: Callable[[TargetDataset], list]

    def fit(self, behavior: BehaviorDataset, weights=None):
        if weights is None:
            return fit_tabular(behavior, self.key_fn)
        return _fit_weighted_tabular(behavior, self.key_fn, np.asarray(weights, dtype=float))


def _fit_weighted_tabular(behavior, key_fn, weights):
    # Weighted per-key means; keys whose weights sum to zero fall back to the
    # plain mean so that the table stays defined wherever data exist.
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    plain = fit_tabular(behavior, key_fn)
    sums: dict = {}
    for key, g, w in zip(key_fn(behavior), behavior.returns, weights):
        sw, swg = sums.get(key, (0.0, 0.0))
        sums[key] = (sw + w, swg + w * g)
    table = {}
    for key, (sw, swg) in sums.items():
        mean = swg / sw if sw > 0 else plain.table[key][0]
        table[key] = (mean, plain.table[key][1])
    default = float(weights @ behavior.returns / weights.sum())
    return type(plain)(table, default, key_fn)


@dataclass(frozen=True, eq=False)
class FixedRegressor:
    """A known function used as the regressor; fitting is a no-op."""

    fn: Callable[[TargetDataset], np.ndarray]

    def fit(self, behavior=None, weights=None) -> "FixedRegressor":
        return self

    def predict_dataset(self, data: TargetDataset) -> np.ndarray:
        return np.asarray(self.fn(data), dtype=float)


# --------------------------------------------------------------------------
# Ratio fitters


@dataclass(frozen=True)
class Corruption:
    """Gaussian perturbation of per-cell ratio denominators."""

    units: str = "probability"
    mean: float = 10.0
    scale: float = 10.0
    floor: float = 1e-3

    def apply(self, model, seed: int):
        from .toy import corrupt_density_denominator

        return corrupt_density_denominator(
            model, seed, units=self.units, mean=self.mean, scale=self.scale, floor=self.floor
        )


@dataclass(frozen=True)
class HistogramRatio:
    grid: BinGrid = BinGrid()
    factorized: bool = False
    clip_max: float = DEFAULT_CLIP
    on_uncovered: str = "raise"
    corruption: Optional[Corruption] = None
    points: Callable[[TargetDataset], np.ndarray] = toy_points

    def fit(self, behavior, target, seed: int = 0):
        model = fit_histogram_ratio(
            behavior, target, self.grid, self.clip_max, self.factorized, self.on_uncovered, self.points
        )
        if self.corruption is not None:
            model = self.corruption.apply(model, seed)
        return model


@dataclass(frozen=True)
class TabularRatio:
    key_fn: Callable[[TargetDataset], list]
    clip_max: float = DEFAULT_CLIP
    on_uncovered: str = "raise"
    corruption: Optional[Corruption] = None

    def fit(self, behavior, target, seed: int = 0):
        model = fit_tabular_ratio(behavior, target, self.key_fn, self.clip_max, self.on_uncovered)
        if self.corruption is not None:
            model = self.corruption.apply(model, seed)
        return model


@dataclass(frozen=True)
class ClassifierRatio:
    features: FeatureMap
    clip_max: float = DEFAULT_CLIP

    def fit(self, behavior, target, seed: int = 0):
        return fit_classifier_ratio(behavior, target, self.features, self.clip_max)


@dataclass(frozen=True, eq=False)
class FixedRatio:
    """A known ratio function; fitting is a no-op."""

    fn: Callable[[TargetDataset], np.ndarray]

    def fit(self, behavior=None, target=None, seed: int = 0) -> "FixedRatio":
        return self

    def ratio_dataset(self, data: TargetDataset) -> np.ndarray:
        return np.asarray(self.fn(data), dtype=float)


# --------------------------------------------------------------------------
# Regression estimators


def estimate_soft(behavior: BehaviorDataset, target: TargetDataset, regressor) -> ValueEstimate:
    """Fit the return regressor on behavior data and average it over target prefixes."""
    model = regressor.fit(behavior)
    preds = model.predict_dataset(target)
    return ValueEstimate(float(np.mean(preds)), "soft", per_trajectory_predictions=preds)


def estimate_w_soft(
    behavior: BehaviorDataset, target: TargetDataset, regressor, ratio, seed: int = 0
) -> ValueEstimate:
    """Like :func:`estimate_soft` with the fit weighted by estimated density ratios."""
    ratio_model = ratio.fit(behavior, target, seed=derive_seed(seed, "ratio"))
    weights = ratio_model.ratio_dataset(behavior)
    if not np.any(weights > 0):
        raise ValueError("all density-ratio weights are zero")
    model = regressor.fit(behavior, weights)
    preds = model.predict_dataset(target)
    return ValueEstimate(
        float(np.mean(preds)),
        "w-soft",
        per_trajectory_predictions=preds,
        diagnostics={"mean_weight": float(np.mean(weights)), "clip_rate": _clip_rate(weights, ratio_model)},
    )


def _clip_rate(weights, ratio_model) -> float:
    clip = getattr(ratio_model, "clip_max", None)
    return float(np.mean(weights >= clip)) if clip is not None else 0.0


def _fold_split(n: int, m: int, k: int, seed: int, plan: Optional[FoldPlan]):
    """Yield ``(train_b, eval_b, train_e, eval_e)`` index arrays per fold."""
    if k == 1:
        # No cross-fitting: nuisances are fit and evaluated on all the data.
        all_b, all_e = np.arange(n), np.arange(m)
        return [(all_b, all_b, all_e, all_e)]
    plan = plan or make_fold_plan(n, m, k, seed)
    folds = []
    for j in range(plan.k):
        eval_b, eval_e = plan.behavior_fold(j), plan.target_fold(j)
        folds.append(
            (np.flatnonzero(plan.behavior_fold_of != j), eval_b, np.flatnonzero(plan.target_fold_of != j), eval_e)
        )
    return folds


def estimate_dr(
    behavior: BehaviorDataset,
    target: TargetDataset,
    regressor,
    ratio,
    k: int = 2,
    seed: int = 0,
    weighted: bool = False,
    fold_plan: Optional[FoldPlan] = None,
) -> ValueEstimate:
    """Cross-fitted doubly robust estimate.

    For fold ``j`` the regressor and ratio are fit on the complement of the
    fold in both datasets, and

        V_j = mean_{D_b^j} h(tau) (G - f(tau)) + mean_{D_e^j} f(tau').

    The estimate is the mean of the ``V_j``.  ``weighted`` fits the
    regressor with the fold's ratio weights.  ``k = 1`` disables
    cross-fitting.

    ``pseudo_outcomes`` holds, for each target prefix, ``f(tau')`` plus its
    fold's correction term; their per-fold means are the ``V_j``.
    ``fold_models`` holds the ``(regressor, ratio)`` models fit for each fold.
    """
    n, m = behavior.size, target.size
    folds = _fold_split(n, m, k, derive_seed(seed, "folds"), fold_plan)
    values, weights_seen, models = [], [], []
    pseudo = np.empty(m)
    for j, (tr_b, ev_b, tr_e, ev_e) in enumerate(folds):
        try:
            train_b, train_e = behavior.subset(tr_b), target.subset(tr_e)
            ratio_model = ratio.fit(train_b, train_e, seed=derive_seed(seed, "ratio", j))
            eval_b = behavior.subset(ev_b)
            if weighted:
                w_train = ratio_model.ratio_dataset(train_b)
                if not np.any(w_train > 0):
                    raise ValueError("all density-ratio weights are zero")
                model = regressor.fit(train_b, w_train)
            else:
                model = regressor.fit(train_b)
            h_eval = ratio_model.ratio_dataset(eval_b)
            correction = float(np.mean(h_eval * (eval_b.returns - model.predict_dataset(eval_b))))
            f_target = model.predict_dataset(target.subset(ev_e))
        except ValueError as exc:
            raise ValueError(f"fold {j}: {exc}") from exc
        values.append(correction + float(np.mean(f_target)))
        pseudo[ev_e] = f_target + correction
        weights_seen.append(h_eval)
        models.append((model, ratio_model))
    per_fold = np.array(values)
    all_w = np.concatenate(weights_seen)
    return ValueEstimate(
        float(np.mean(per_fold)),
        "dr-w-soft" if weighted else "dr-soft",
        per_fold_values=per_fold,
        pseudo_outcomes=pseudo,
        diagnostics={"mean_weight": float(np.mean(all_w)), "k": float(len(folds))},
        fold_models=tuple(models),
    )


def estimate_mc(target_full: BehaviorDataset) -> ValueEstimate:
    """Mean of full-horizon returns observed under the target policy."""
    returns = target_full.returns
    return ValueEstimate(float(np.mean(returns)), "mc", per_trajectory_predictions=returns.copy())


# --------------------------------------------------------------------------
# LOPE


@dataclass(frozen=True)
class ActionLeastSquares:
    """Least squares on prefix features plus a one-hot of the next action.

    Action indicators are built for the actions present in the training
    data, relative to the lowest one; actions never seen in training share
    the reference level.
    """

    features: FeatureMap
    intercept: bool = True

    def fit(self, behavior: BehaviorDataset, weights=None):
        if behavior.next_actions is None:
            raise ValueError("LOPE needs the action taken after each behavior prefix")
        seen = np.unique(behavior.next_actions)[1:]
        fmap = _action_features(self.features, seen)
        return fit_least_squares(behavior, fmap, weights, self.intercept)


def _action_features(base: FeatureMap, levels: np.ndarray) -> FeatureMap:
    def fn(data):
        if data.next_actions is None:
            raise ValueError("prefixes lack next-action annotations")
        onehot = (data.next_actions[:, None] == levels[None, :]).astype(float)
        return np.column_stack([base.apply(data), onehot])

    return FeatureMap(f"{base.name}+action", base.arity, base.dim + levels.size, fn)


def _with_next_actions(data: TargetDataset, action: int) -> TargetDataset:
    return TargetDataset(
        states=data.states,
        rewards=data.rewards,
        lengths=data.lengths,
        actions=data.actions,
        next_actions=np.full(data.size, action, dtype=int),
        done=data.done,
    )


def estimate_lope(
    behavior: BehaviorDataset,
    target: TargetDataset,
    regressor,
    ratio,
    action_probs: Callable[[TargetDataset], np.ndarray],
    seed: int = 0,
) -> ValueEstimate:
    """Action-conditioned regression with a ratio-weighted residual correction.

        V = (1/N) sum_i h(tau_i) (G_i - f(tau_i, a_i)) + (1/N) sum_i E_{a ~ pi_e(.|tau_i)} f(tau_i, a)

    ``action_probs(data)`` returns the target policy's action distribution
    after each prefix as an ``(n, n_actions)`` array; the expectation is an
    exact sum over actions.
    """
    if behavior.next_actions is None:
        raise ValueError("LOPE needs the action taken after each behavior prefix")
    ratio_model = ratio.fit(behavior, target, seed=derive_seed(seed, "ratio"))
    model = regressor.fit(behavior)
    h = ratio_model.ratio_dataset(behavior)
    residual = behavior.returns - model.predict_dataset(behavior)
    probs = np.asarray(action_probs(behavior), dtype=float)
    expected = np.zeros(behavior.size)
    for a in range(probs.shape[1]):
        if np.any(probs[:, a] > 0):
            expected += probs[:, a] * model.predict_dataset(_with_next_actions(behavior, a))
    pseudo = h * residual + expected
    return ValueEstimate(float(np.mean(pseudo)), "lope", pseudo_outcomes=pseudo)


# --------------------------------------------------------------------------
# Baselines that need per-step rewards


def _state_ids(data: TargetDataset) -> np.ndarray:
    return np.rint(data.states[:, :, 0]).astype(int)


def estimate_model_based(
    target: TargetDataset,
    full_h: int,
    discount: float,
    n_states: int,
    policy: np.ndarray,
    reward: Optional[np.ndarray] = None,
    terminal: Optional[np.ndarray] = None,
) -> ValueEstimate:
    """Fit a tabular transition model from target data and plan under it.

    Transition probabilities are empirical frequencies; state-action pairs
    never observed get a uniform next-state row.  The reward of entering a
    state and its terminal flag come from ``reward`` / ``terminal`` when
    given, otherwise from observed rewards (mean per entered state, 0 when
    unseen) and observed early stops.  The value is averaged over the
    empirical initial-state distribution.

    Parameters
    ----------
    policy : ndarray, shape (n_states, n_actions)
        Target policy action probabilities.
    """
    if target.actions is None:
        raise ValueError("model-based estimation needs recorded actions")
    if target.rewards.shape[1] == 0:
        raise ValueError("model-based estimation needs per-step rewards")
    states = _state_ids(target)
    if not np.allclose(target.states[:, :, 0], states) or target.states.shape[2] != 1:
        raise ValueError("model-based estimation supports discrete single-id states only")
    policy = np.asarray(policy, dtype=float)
    n_actions = policy.shape[1]
    counts = np.zeros((n_states, n_actions, n_states))
    r_sum, r_cnt = np.zeros(n_states), np.zeros(n_states)
    stops = np.zeros(n_states, dtype=bool)
    for i in range(target.size):
        k = target.lengths[i]
        s, a, nxt = states[i, :k], target.actions[i, :k], states[i, 1 : k + 1]
        np.add.at(counts, (s, a, nxt), 1.0)
        np.add.at(r_sum, nxt, target.rewards[i, :k])
        np.add.at(r_cnt, nxt, 1.0)
        if k < target.horizon_h:
            stops[states[i, k]] = True
    totals = counts.sum(axis=2, keepdims=True)
    trans = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / n_states)
    if reward is None:
        reward = np.where(r_cnt > 0, r_sum / np.where(r_cnt > 0, r_cnt, 1.0), 0.0)
    if terminal is None:
        terminal = stops
    reward = np.asarray(reward, dtype=float)
    terminal = np.asarray(terminal, dtype=bool)
    # Backward induction: V_t(s) = sum_a pi(a|s) sum_s' P(s'|s,a) (R(s') + gamma V_{t+1}(s')).
    v = np.zeros(n_states)
    for _ in range(full_h):
        q = trans @ (reward + discount * v)
        v = np.where(terminal, 0.0, np.sum(policy * q, axis=1))
    start = states[:, 0]
    return ValueEstimate(float(np.mean(v[start])), "model-based", diagnostics={"seen_pairs": float((totals > 0).sum())})


def estimate_extrapolation(
    target: TargetDataset, mode: str, full_h: int, discount: float = 1.0
) -> ValueEstimate:
    """Extrapolate the short-horizon reward rate to the full horizon.

    Each unterminated prefix predicts ``full_h`` times its average (or last)
    observed reward.  Prefixes whose episode already ended predict their
    realized discounted return.
    """
    if mode not in ("average", "last"):
        raise ValueError(f"mode must be 'average' or 'last', got {mode!r}")
    if target.rewards.shape[1] == 0:
        raise ValueError("extrapolation needs per-step rewards")
    preds = np.empty(target.size)
    for i in range(target.size):
        k = target.lengths[i]
        r = target.rewards[i, :k]
        if target.terminated[i]:
            preds[i] = discounted_return(r, discount)
        elif k == 0:
            preds[i] = 0.0
        else:
            preds[i] = (r.mean() if mode == "average" else r[-1]) * full_h
    ident = "extrap-avg" if mode == "average" else "extrap-last"
    return ValueEstimate(float(np.mean(preds)), ident, per_trajectory_predictions=preds)
