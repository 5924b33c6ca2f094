import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import discrete_behavior, discrete_target, toy_behavior, toy_target
from softsurrogate import toy
from softsurrogate.density_ratio import (
    BinGrid,
    ConvergenceError,
    CoverageError,
    dump_histogram,
    fit_classifier_ratio,
    fit_histogram_ratio,
    fit_tabular_ratio,
    mean_weight_diagnostic,
)
from softsurrogate.regression import FeatureMap


def _ids(data):
    return [int(x) for x in data.states[:, 0, 0]]


def _ids_points(data):
    return data.states[:, :1, 0]


ID_FEATURE = FeatureMap("id", None, 1, lambda d: d.states[:, :1, 0])


def test_identical_distributions_ratio_one():
    s0 = np.array([0.1, 0.6, 1.1, 1.4])
    s1 = np.array([0.2, 1.5, 0.0, 1.3])
    b = toy_behavior(np.tile(s0, 3), np.tile(s1, 3), np.zeros(12))
    t = toy_target(s0, s1)
    model = fit_histogram_ratio(b, t)
    occupied = model.count_b > 0
    np.testing.assert_allclose(model.ratios[occupied], 1.0)
    np.testing.assert_allclose(model.ratio_dataset(b), 1.0)


def test_histogram_arithmetic_example():
    grid = BinGrid(bins=(2,), ranges=((0.0, 2.0),))
    b = discrete_behavior(np.r_[np.full(50, 0.5), np.full(4950, 1.5)], np.zeros(5000))
    t = discrete_target(np.r_[np.full(10, 0.5), np.full(90, 1.5)])
    model = fit_histogram_ratio(b, t, grid, points=_ids_points)
    np.testing.assert_allclose(model.ratios[0], 10.0)
    np.testing.assert_allclose(model.ratios[1], (90 / 100) / (4950 / 5000))


def test_histogram_coverage_error_names_bin():
    grid = BinGrid(bins=(2,), ranges=((0.0, 2.0),))
    b = discrete_behavior([0.5, 0.5], [0.0, 0.0])
    t = discrete_target([1.5])
    with pytest.raises(CoverageError, match="bin"):
        fit_histogram_ratio(b, t, grid, points=_ids_points)
    model = fit_histogram_ratio(b, t, grid, points=_ids_points, on_uncovered="zero")
    assert model.ratio_dataset(t)[0] == 0.0


def test_zero_target_bins_give_zero():
    grid = BinGrid(bins=(2,), ranges=((0.0, 2.0),))
    model = fit_histogram_ratio(discrete_behavior([0.5, 1.5], [0, 0]), discrete_target([0.5]), grid, points=_ids_points)
    assert model.ratios[1] == 0.0


def test_tabular_equal_frequencies():
    b = discrete_behavior(np.r_[np.zeros(50), np.ones(4950)], np.zeros(5000))
    t = discrete_target(np.r_[np.zeros(5), np.ones(495)])
    model = fit_tabular_ratio(b, t, _ids)
    np.testing.assert_allclose(model.ratio_dataset(discrete_target([0, 1])), [1.0, 1.0])


def test_tabular_key_absent_from_target():
    model = fit_tabular_ratio(discrete_behavior([0, 1], [0, 0]), discrete_target([0]), _ids)
    assert model.ratio_dataset(discrete_target([1]))[0] == 0.0
    assert model.ratio_dataset(discrete_target([9]))[0] == 0.0


def test_tabular_coverage_error():
    with pytest.raises(CoverageError, match="key"):
        fit_tabular_ratio(discrete_behavior([0], [0]), discrete_target([1]), _ids)


@given(
    st.lists(st.integers(0, 5), min_size=1, max_size=60),
    st.lists(st.integers(0, 5), min_size=1, max_size=30),
)
def test_tabular_self_normalization(b_ids, t_ids):
    t_ids = [k for k in t_ids if k in set(b_ids)] or [b_ids[0]]
    model = fit_tabular_ratio(discrete_behavior(b_ids, np.zeros(len(b_ids))), discrete_target(t_ids), _ids, clip_max=1e9)
    np.testing.assert_allclose(mean_weight_diagnostic(model, discrete_target(b_ids)).mean_weight, 1.0, rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 50))
def test_ratios_nonnegative_and_clipped(seed, clip):
    cfg = toy.ToyConfig(n_behavior=300, n_target=60, seed=seed)
    b, (t, _) = toy.sample_behavior(cfg), toy.sample_target(cfg)
    for model in (
        fit_histogram_ratio(b, t, clip_max=clip, on_uncovered="zero"),
        fit_histogram_ratio(b, t, clip_max=clip, factorized=True, on_uncovered="zero"),
        toy.corrupt_density_denominator(fit_histogram_ratio(b, t, clip_max=clip, on_uncovered="zero"), seed),
    ):
        r = model.ratio_dataset(b)
        assert np.all(r >= 0) and np.all(r <= clip)


def test_histogram_and_tabular_agree_when_grid_resolves_keys():
    rng = np.random.default_rng(0)
    b = discrete_behavior(rng.integers(0, 6, 500), np.zeros(500))
    t = discrete_target(rng.integers(0, 6, 80))
    grid = BinGrid(bins=(6,), ranges=((-0.5, 5.5),))
    hist = fit_histogram_ratio(b, t, grid, points=_ids_points)
    tab = fit_tabular_ratio(b, t, _ids)
    probe = discrete_target(np.arange(6))
    np.testing.assert_allclose(hist.ratio_dataset(probe), tab.ratio_dataset(probe))


def test_ratios_converge_to_one_at_binomial_rate():
    grid = BinGrid(bins=(4,), ranges=((-0.5, 3.5),))
    spreads = []
    for n in (10**3, 10**4, 10**5):
        rng = np.random.default_rng(n)
        b = discrete_behavior(rng.integers(0, 4, n), np.zeros(n))
        t = discrete_target(rng.integers(0, 4, n))
        r = fit_histogram_ratio(b, t, grid, points=_ids_points).ratios
        spreads.append(np.max(np.abs(r - 1)))
        # Relative error of a ratio of two cell frequencies p = 1/4: sd ~ sqrt(2 (1-p) / (n p)).
        assert spreads[-1] < 5 * np.sqrt(2 * 3 / n)
    assert spreads[2] < spreads[0]


def test_classifier_identical_distributions():
    rng = np.random.default_rng(0)
    b = discrete_behavior(rng.normal(size=2000), np.zeros(2000))
    t = discrete_target(rng.normal(size=1000))
    model = fit_classifier_ratio(b, t, ID_FEATURE)
    np.testing.assert_allclose(model.ratio_dataset(discrete_target(np.linspace(-2, 2, 9))), 1.0, atol=0.1)


def test_classifier_separable_saturates():
    b = discrete_behavior(np.linspace(-2, -1, 50), np.zeros(50))
    t = discrete_target(np.linspace(1, 2, 50))
    with pytest.raises(ConvergenceError, match="gradient norm") as info:
        fit_classifier_ratio(b, t, ID_FEATURE, clip_max=5.0, max_iter=3000)
    r = info.value.model.ratio_dataset(discrete_target([-2.0, 2.0]))
    np.testing.assert_allclose(r, [0.0, 5.0], atol=1e-3)


def test_classifier_prior_correction_matches_histogram():
    # With a binary indicator feature the logistic fit reproduces cell frequencies.
    b = discrete_behavior(np.r_[np.zeros(300), np.ones(700)], np.zeros(1000))
    t = discrete_target(np.r_[np.zeros(60), np.ones(40)])
    clf = fit_classifier_ratio(b, t, ID_FEATURE, tol=1e-10, max_iter=100_000)
    tab = fit_tabular_ratio(b, t, _ids)
    probe = discrete_target([0, 1])
    np.testing.assert_allclose(clf.ratio_dataset(probe), tab.ratio_dataset(probe), rtol=1e-6)


def test_mean_weight_true_ratio_tends_to_one():
    rng = np.random.default_rng(1)
    pb, pe = np.array([0.5, 0.3, 0.2]), np.array([0.2, 0.3, 0.5])
    ids = rng.choice(3, size=200_000, p=pb)
    from softsurrogate.estimators import FixedRatio

    true = FixedRatio(lambda d: (pe / pb)[np.rint(d.states[:, 0, 0]).astype(int)])
    diag = mean_weight_diagnostic(true, discrete_target(ids))
    np.testing.assert_allclose(diag.mean_weight, 1.0, atol=0.01)
    assert not diag.flagged


def test_mean_weight_zero_flagged():
    model = fit_tabular_ratio(discrete_behavior([0, 1], [0, 0]), discrete_target([0]), _ids)
    diag = mean_weight_diagnostic(model, discrete_target([1, 1]))
    assert diag.mean_weight == 0.0 and diag.flagged


def test_mean_weight_after_corruption_deviates():
    cfg = toy.ToyConfig(seed=3)
    b, (t, _) = toy.sample_behavior(cfg), toy.sample_target(cfg)
    clean = fit_histogram_ratio(b, t, factorized=True, on_uncovered="zero")
    dirty = toy.corrupt_density_denominator(clean, seed=3)
    assert abs(mean_weight_diagnostic(dirty, b).mean_weight - 1) > abs(mean_weight_diagnostic(clean, b).mean_weight - 1)
    assert mean_weight_diagnostic(dirty, b).flagged


def test_dump_histogram_columns():
    cfg = toy.ToyConfig(n_behavior=200, n_target=20, seed=0)
    model = fit_histogram_ratio(toy.sample_behavior(cfg), toy.sample_target(cfg)[0], on_uncovered="zero")
    lines = dump_histogram(model).splitlines()
    assert lines[0] == "bin_index_s0,bin_index_s1,count_b,count_e,ratio"
    assert len(lines) == 2501
    assert sum(int(l.split(",")[2]) for l in lines[1:]) == 200


def test_grid_validation():
    with pytest.raises(ValueError):
        BinGrid(bins=(0, 5))
    with pytest.raises(ValueError):
        BinGrid(bins=(5,), ranges=((1.0, 1.0),))
