import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import discrete_behavior, discrete_target
from softsurrogate import sepsis, toy
from softsurrogate.data import BehaviorDataset, TargetDataset, make_fold_plan, truncate_dataset
from softsurrogate.density_ratio import BinGrid
from softsurrogate.estimators import (
    ActionLeastSquares,
    Corruption,
    FixedRatio,
    FixedRegressor,
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
from softsurrogate.regression import QUADRATIC_FEATURES, FeatureMap


def _const(c):
    return FixedRegressor(lambda d: np.full(d.size, float(c)))


def _toy(seed=0, **kw):
    cfg = toy.ToyConfig(seed=seed, **kw)
    target, truth = toy.sample_target(cfg)
    return toy.sample_behavior(cfg), target, truth


def _oracle_f():
    return FixedRegressor(lambda d: toy.true_return(d.states[:, 0, 0], d.states[:, 1, 0]))


def _oracle_h():
    return FixedRatio(lambda d: toy.oracle_ratio(d.states[:, 0, 0], d.states[:, 1, 0]))


def test_soft_constant_predictor():
    b, t, _ = _toy(n_behavior=50, n_target=10)
    est = estimate_soft(b, t, _const(3.25))
    assert est.value == 3.25 and est.estimator_id == "soft"
    assert est.per_trajectory_predictions.shape == (10,)


def test_soft_value_is_mean_of_predictions():
    b, t, _ = _toy(1)
    est = estimate_soft(b, t, LeastSquaresRegressor(QUADRATIC_FEATURES))
    np.testing.assert_allclose(est.value, est.per_trajectory_predictions.mean(), rtol=1e-15)


def test_soft_small_per_trajectory_error():
    mses = []
    for seed in range(20):
        b, t, truth = _toy(seed)
        est = estimate_soft(b, t, LeastSquaresRegressor(QUADRATIC_FEATURES, intercept=False))
        mses.append(np.mean((est.per_trajectory_predictions - truth) ** 2))
    assert np.mean(mses) < 0.012


def test_w_soft_unit_ratios_match_soft():
    b, t, _ = _toy(2)
    reg = LeastSquaresRegressor(QUADRATIC_FEATURES)
    ones = FixedRatio(lambda d: np.ones(d.size))
    np.testing.assert_allclose(estimate_w_soft(b, t, reg, ones).value, estimate_soft(b, t, reg).value, rtol=1e-10)


def test_w_soft_all_zero_weights_error():
    b, t, _ = _toy(2, n_behavior=50, n_target=10)
    with pytest.raises(ValueError, match="zero"):
        estimate_w_soft(b, t, LeastSquaresRegressor(QUADRATIC_FEATURES), FixedRatio(lambda d: np.zeros(d.size)))


def test_w_soft_coverage_violation_propagates():
    from softsurrogate.density_ratio import CoverageError

    b, t, _ = _toy(0, n_behavior=30)
    with pytest.raises(CoverageError):
        estimate_w_soft(b, t, LeastSquaresRegressor(QUADRATIC_FEATURES), HistogramRatio(BinGrid()))


def test_dr_single_sample_example():
    b = discrete_behavior([0.0], [3.0])
    t = discrete_target([1.0])
    f = FixedRegressor(lambda d: np.where(d.states[:, 0, 0] == 0, 1.0, 4.0))
    est = estimate_dr(b, t, f, FixedRatio(lambda d: np.full(d.size, 2.0)), k=1)
    assert est.value == 8.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(2, 5), st.booleans())
def test_dr_value_is_mean_of_folds(seed, k, weighted):
    b, t, _ = _toy(seed, n_behavior=300, n_target=40)
    ratio = FixedRatio(lambda d: 0.5 + d.states[:, 1, 0] ** 2)
    est = estimate_dr(b, t, LeastSquaresRegressor(QUADRATIC_FEATURES), ratio, k=k, seed=seed, weighted=weighted)
    assert est.per_fold_values.size == k
    np.testing.assert_allclose(est.value, np.mean(est.per_fold_values), rtol=1e-14)
    assert len(est.fold_models) == k


def test_dr_zero_ratio_reduces_to_cross_fitted_regression():
    b, t, _ = _toy(4, n_behavior=400, n_target=40)
    reg = LeastSquaresRegressor(QUADRATIC_FEATURES)
    plan = make_fold_plan(b.size, t.size, 2, seed=1)
    est = estimate_dr(b, t, reg, FixedRatio(lambda d: np.zeros(d.size)), fold_plan=plan)
    manual = []
    for j in range(2):
        model = reg.fit(b.subset(np.flatnonzero(plan.behavior_fold_of != j)))
        manual.append(model.predict_dataset(t.subset(plan.target_fold(j))).mean())
    np.testing.assert_allclose(est.value, np.mean(manual), rtol=1e-12)


def test_dr_nuisances_trained_on_complements():
    b, t, _ = _toy(5, n_behavior=200, n_target=20)
    seen = []

    class Recorder:
        def fit(self, behavior, target, seed=0):
            seen.append((behavior.size, target.size))
            return FixedRatio(lambda d: np.ones(d.size))

    estimate_dr(b, t, LeastSquaresRegressor(QUADRATIC_FEATURES), Recorder(), k=4)
    assert seen == [(150, 15)] * 4


def test_dr_fold_error_named():
    b, t, _ = _toy(0, n_behavior=6, n_target=4)
    with pytest.raises(ValueError, match="fold 0"):
        estimate_dr(b, t, LeastSquaresRegressor(QUADRATIC_FEATURES), FixedRatio(lambda d: np.ones(d.size)), k=2)


def test_dr_oracle_nuisances_unbiased_small():
    v = toy.population_target_value(100)
    errors = []
    for seed in range(100):
        b, t, _ = _toy(derive_seed(seed, "unbiased"))
        errors.append(estimate_dr(b, t, _oracle_f(), _oracle_h(), seed=seed).value - v)
    errors = np.array(errors)
    assert abs(errors.mean()) <= 3 * errors.std(ddof=1) / np.sqrt(errors.size)


def test_dr_error_shrinks_with_scale():
    def mean_abs(n, m):
        v = toy.population_target_value(m)
        reg = LeastSquaresRegressor(QUADRATIC_FEATURES)
        out = []
        for seed in range(40):
            b, t, _ = _toy(seed, n_behavior=n, n_target=m)
            out.append(abs(estimate_dr(b, t, reg, _oracle_h(), seed=seed).value - v))
        return np.mean(out)

    assert mean_abs(5000, 1000) < mean_abs(500, 100)


def test_on_policy_baseline_has_lower_variance_than_reweighted():
    reg = LeastSquaresRegressor(QUADRATIC_FEATURES)
    ratio = HistogramRatio(on_uncovered="zero", corruption=Corruption("count"))
    on_policy, reweighted = [], []
    for seed in range(60):
        b, t, _ = _toy(seed)
        model = reg.fit(b)
        h = ratio.fit(b, t, seed=seed).ratio_dataset(b)
        on_policy.append(model.predict_dataset(t).mean())
        reweighted.append(np.mean(h * model.predict_dataset(b)))
    assert np.var(on_policy) < np.var(reweighted)


def test_mc_mean():
    data = discrete_behavior([0, 1, 2], [1.0, 2.0, 3.0])
    est = estimate_mc(data)
    assert est.value == 2.0
    np.testing.assert_array_equal(est.per_trajectory_predictions, [1, 2, 3])


def _lope_data():
    b = BehaviorDataset(states=np.zeros((1, 1, 1)), rewards=np.zeros((1, 0)), next_actions=[0], returns=[5.0])
    t = TargetDataset(states=np.zeros((1, 1, 1)), rewards=np.zeros((1, 0)))
    return b, t


def test_lope_single_sample_example():
    b, t = _lope_data()
    f = FixedRegressor(lambda d: np.where(d.next_actions == 0, 3.0, 5.0))
    est = estimate_lope(b, t, f, FixedRatio(lambda d: np.ones(d.size)), lambda d: np.full((d.size, 2), 0.5))
    assert est.value == 6.0


def test_lope_zero_ratio_is_mean_expected_prediction():
    b, t = _lope_data()
    f = FixedRegressor(lambda d: np.where(d.next_actions == 0, 3.0, 5.0))
    est = estimate_lope(b, t, f, FixedRatio(lambda d: np.zeros(d.size)), lambda d: np.tile([0.25, 0.75], (d.size, 1)))
    assert est.value == 0.25 * 3 + 0.75 * 5


def test_lope_missing_actions():
    b, t, _ = _toy(0, n_behavior=20, n_target=5)
    with pytest.raises(ValueError, match="action"):
        estimate_lope(b, t, _const(0), FixedRatio(lambda d: np.ones(d.size)), lambda d: np.ones((d.size, 1)))


def test_lope_reduces_to_behavior_baseline_dr(spec, policies):
    b = sepsis.rollout(spec, policies[0], 2000, h_record=2, seed=1)
    t = truncate_dataset(sepsis.rollout(spec, policies[1], 300, seed=2), 2).unlabeled()
    reg = TabularRegressor(sepsis.surrogate_keys)
    ratio = TabularRatio(sepsis.surrogate_keys, on_uncovered="zero")
    greedy = sepsis.soften(policies[1], 0.0)
    lope = estimate_lope(b, t, reg, ratio, sepsis.policy_action_probs(greedy), seed=3)
    dr = estimate_dr(b, t, reg, ratio, k=1, seed=3)
    model = reg.fit(b)
    expected = dr.value - model.predict_dataset(t).mean() + model.predict_dataset(b).mean()
    np.testing.assert_allclose(lope.value, expected, rtol=1e-12)


def test_action_least_squares_unseen_action_uses_reference():
    rng = np.random.default_rng(0)
    x = rng.normal(size=200)
    a = rng.integers(0, 2, 200)
    g = 2 * x + 3 * a
    b = BehaviorDataset(states=x[:, None, None], rewards=np.zeros((200, 0)), next_actions=a, returns=g)
    fmap = FeatureMap("x", None, 1, lambda d: d.states[:, 0, :1])
    model = ActionLeastSquares(fmap).fit(b)
    probe = TargetDataset(states=np.ones((3, 1, 1)), rewards=np.zeros((3, 0)), next_actions=[0, 1, 5])
    np.testing.assert_allclose(model.predict_dataset(probe), [2.0, 5.0, 2.0], atol=1e-8)


def _tiny_target(paths, actions, rewards, lengths):
    return TargetDataset(
        states=np.asarray(paths, float)[:, :, None],
        rewards=np.asarray(rewards, float),
        lengths=lengths,
        actions=np.asarray(actions),
    )


def test_model_based_frequency_and_known_tables():
    # Three observed (0, a=0) -> 1 transitions; state 1 pays 1 on entry and is terminal.
    data = _tiny_target([[0, 1], [0, 1], [0, 1]], [[0], [0], [0]], [[1.0], [1.0], [1.0]], [1, 1, 1])
    policy = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    est = estimate_model_based(data, 3, 1.0, 3, policy, reward=[0.0, 1.0, 0.0], terminal=[False, True, False])
    assert est.value == 1.0


def test_model_based_unseen_pairs_uniform():
    data = _tiny_target([[0, 0]], [[0]], [[0.0]], [1])
    policy = np.array([[0.0, 1.0], [0.0, 1.0]])  # action 1 never observed
    est = estimate_model_based(data, 1, 1.0, 2, policy, reward=[0.0, 2.0], terminal=[False, False])
    assert est.value == 1.0  # uniform over {0, 1}: 0.5 * 0 + 0.5 * 2


def test_model_based_rejects_continuous_states():
    data = TargetDataset(states=np.full((1, 2, 1), 0.5), rewards=np.zeros((1, 1)), actions=[[0]])
    with pytest.raises(ValueError, match="discrete"):
        estimate_model_based(data, 2, 1.0, 2, np.ones((2, 1)))


def test_model_based_converges_with_full_data(spec, policies):
    pi_e = policies[1]
    data = sepsis.rollout(spec, pi_e, 100_000, seed=11).unlabeled()
    est = estimate_model_based(data, spec.horizon, spec.discount, spec.n_states, pi_e.probs, spec.reward, spec.terminal)
    start = np.bincount(np.rint(data.states[:, 0, 0]).astype(int), minlength=spec.n_states) / data.size
    exact = sepsis.exact_policy_value(spec, pi_e, start)
    np.testing.assert_allclose(est.value, exact, atol=0.01)


def test_extrapolation_examples():
    data = _tiny_target([[0, 0, 0]], [[0, 0]], [[1.0, 1.0]], [2])
    assert estimate_extrapolation(data, "average", 20).value == 20.0
    data = _tiny_target([[0, 0, 0]], [[0, 0]], [[0.0, 1.0]], [2])
    assert estimate_extrapolation(data, "last", 20).value == 20.0
    assert estimate_extrapolation(data, "average", 20).value == 10.0


def test_extrapolation_terminated_uses_realized_return():
    data = TargetDataset(
        states=np.zeros((1, 3, 1)), rewards=[[-1.0, 0.0]], lengths=[1], actions=[[0, 0]], done=[True]
    )
    assert estimate_extrapolation(data, "average", 20, 0.99).value == -1.0


def test_extrapolation_sparse_rewards_predict_zero(spec, policies):
    t = truncate_dataset(sepsis.rollout(spec, policies[1], 500, seed=5), 2).unlabeled()
    for mode in ("average", "last"):
        preds = estimate_extrapolation(t, mode, 20, 0.99).per_trajectory_predictions
        np.testing.assert_array_equal(preds[~t.done], 0.0)


def test_extrapolation_bad_mode():
    with pytest.raises(ValueError):
        estimate_extrapolation(_tiny_target([[0, 0]], [[0]], [[0.0]], [1]), "median", 5)


def test_derive_seed_deterministic_and_label_sensitive():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    assert 0 <= derive_seed(7, "x") < 2**63
