import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import discrete_behavior, discrete_target
from softsurrogate import toy
from softsurrogate.density_ratio import CoverageError
from softsurrogate.estimators import FixedRatio, FixedRegressor, LeastSquaresRegressor, estimate_dr, estimate_soft
from softsurrogate.regression import QUADRATIC_FEATURES
from softsurrogate.theory import (
    TERM_NAMES,
    BiasOracleInputs,
    BoundInputs,
    empirical_bound_coverage,
    evaluate_bound,
    evaluate_bound_reference,
    product_bias,
)


def _inputs(**kw):
    base = dict(
        var_target=0.0, second_moment_b=0.0, eps_e=[0, 0], eps_b=[0, 0], eps_h=[0, 0],
        n=5000, m=100, k=2, delta=0.05, horizon_H=1.0, c1=2.0, c2=3.0,
    )
    base.update(kw)
    return BoundInputs(**base)


def test_zero_errors_leave_terms_four_and_six():
    terms = evaluate_bound(_inputs()).terms
    nonzero = [i + 1 for i, t in enumerate(terms) if t != 0]
    assert nonzero == [4, 6]


def test_term_one_example():
    out = evaluate_bound(_inputs(var_target=1.0))
    np.testing.assert_allclose(out.terms[0], math.sqrt(2 * math.log(160) / 100), rtol=1e-14)
    np.testing.assert_allclose(out.terms[0], 0.3186, atol=1e-4)


def test_doubling_m_rates():
    a = evaluate_bound(_inputs(var_target=1.0))
    b = evaluate_bound(_inputs(var_target=1.0, m=200))
    np.testing.assert_allclose(a.terms[0] / b.terms[0], math.sqrt(2), rtol=1e-12)
    np.testing.assert_allclose(a.terms[3] / b.terms[3], 2.0, rtol=1e-12)


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 1.5])
def test_delta_validation(delta):
    with pytest.raises(ValueError):
        _inputs(delta=delta)


def test_per_fold_lengths_validated():
    with pytest.raises(ValueError):
        _inputs(eps_e=[0.1])


positive = st.floats(0, 10, allow_nan=False)


@settings(max_examples=200)
@given(
    positive, positive, st.integers(1, 6), st.integers(1, 10**6), st.integers(1, 10**6),
    st.floats(1e-6, 0.999), positive, positive, positive, st.data(),
)
def test_two_code_paths_agree(var_t, sm, k, n, m, delta, horizon, c1, c2, data):
    eps = [data.draw(st.lists(positive, min_size=k, max_size=k)) for _ in range(3)]
    inputs = BoundInputs(var_t, sm, eps[0], eps[1], eps[2], n, m, k, delta, horizon, c1, c2)
    a, b = evaluate_bound(inputs), evaluate_bound_reference(inputs)
    np.testing.assert_allclose(a.terms, b.terms, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(a.total, b.total, rtol=1e-12)
    assert set(a.as_dict()) == set(TERM_NAMES) | {"total"}


def test_bound_nonincreasing_in_n():
    totals = [evaluate_bound(_inputs(n=n, second_moment_b=1.0)).total for n in (10**3, 10**4, 10**5)]
    assert totals[0] >= totals[1] >= totals[2]


def test_product_bias_hand_case():
    inputs = BiasOracleInputs([0.5, 0.5], [[1.0, 2.0]], [[0.5, 2.0]])
    assert product_bias(inputs) == -0.75


def test_product_bias_either_exact_nuisance():
    p = np.full(4, 0.25)
    assert product_bias(BiasOracleInputs(p, np.zeros((2, 4)), np.random.default_rng(0).uniform(0, 2, (2, 4)))) == 0.0
    assert product_bias(BiasOracleInputs(p, np.random.default_rng(1).normal(size=(2, 4)), np.ones((2, 4)))) == 0.0


def test_product_bias_averages_folds():
    p = np.array([0.25, 0.75])
    inputs = BiasOracleInputs(p, [[1.0, 0.0], [0.0, 2.0]], [[0.0, 1.0], [1.0, 0.5]])
    np.testing.assert_allclose(product_bias(inputs), 0.5 * (0.25 + 0.75))


def test_from_nuisances_coverage_error():
    with pytest.raises(CoverageError):
        BiasOracleInputs.from_nuisances([0.5, 0.5], [1.0, 0.0], [0, 0], [[0, 0]], [[1, 1]])


def test_from_nuisances_relative_errors():
    inputs = BiasOracleInputs.from_nuisances([0.5, 0.5], [0.25, 0.75], [1.0, 2.0], [[1.5, 2.0]], [[1.0, 1.0]])
    np.testing.assert_allclose(inputs.delta_f, [[0.5, 0.0]])
    np.testing.assert_allclose(inputs.ratio_rel, [[0.5, 1.5]])


def _discrete_instance():
    pb = np.array([0.3, 0.3, 0.2, 0.2])
    pe = np.array([0.1, 0.2, 0.3, 0.4])
    f = np.array([0.0, 1.0, 3.0, 2.0])
    return pb, pe, f


def _lookup(table):
    return lambda d: np.asarray(table, float)[np.rint(d.states[:, 0, 0]).astype(int)]


@pytest.mark.parametrize("which", ["regressor", "ratio"])
def test_exact_nuisance_gives_no_bias(which):
    pb, pe, f = _discrete_instance()
    h = pe / pb
    f_hat = f + (0 if which == "regressor" else np.array([0.5, -1.0, 0.7, 0.2]))
    h_hat = h * (np.array([0.3, 1.6, 0.8, 1.2]) if which == "regressor" else 1.0)
    rng = np.random.default_rng(0)
    errs = []
    for seed in range(2000):
        ids_b = rng.choice(4, 200, p=pb)
        ids_e = rng.choice(4, 50, p=pe)
        b = discrete_behavior(ids_b, f[ids_b] + rng.normal(0, 1, 200))
        est = estimate_dr(b, discrete_target(ids_e), FixedRegressor(_lookup(f_hat)), FixedRatio(_lookup(h_hat)), seed=seed)
        errs.append(est.value - pe @ f)
    errs = np.array(errs)
    assert abs(errs.mean()) <= 3 * errs.std(ddof=1) / np.sqrt(errs.size)


def test_coverage_oracle_nuisances():
    f = FixedRegressor(lambda d: toy.true_return(d.states[:, 0, 0], d.states[:, 1, 0]))
    h = FixedRatio(lambda d: toy.oracle_ratio(d.states[:, 0, 0], d.states[:, 1, 0]))
    tight = empirical_bound_coverage(toy.ToyConfig(), (f, h), n_seeds=200, delta=0.05, oracle_size=20_000)
    assert tight.coverage >= 0.95
    loose = empirical_bound_coverage(toy.ToyConfig(), (f, h), n_seeds=50, delta=0.5, oracle_size=20_000)
    assert loose.coverage >= 0.5
    for lo, hi in zip(loose.rows, tight.rows):
        assert lo.seed == hi.seed and lo.bound.total < hi.bound.total


def test_coverage_csv_columns():
    f = FixedRegressor(lambda d: toy.true_return(d.states[:, 0, 0], d.states[:, 1, 0]))
    h = FixedRatio(lambda d: toy.oracle_ratio(d.states[:, 0, 0], d.states[:, 1, 0]))
    report = empirical_bound_coverage(toy.ToyConfig(), (f, h), n_seeds=3, delta=0.1, oracle_size=5000)
    lines = report.to_csv().splitlines()
    assert lines[0] == "seed," + ",".join(TERM_NAMES) + ",total,empirical_error,covered"
    assert len(lines) == 4


def test_soft_consistency_rate():
    reg = LeastSquaresRegressor(QUADRATIC_FEATURES, intercept=False)
    sizes = np.array([100, 1000, 10000])
    errors = []
    for m in sizes:
        v = toy.population_target_value(m)
        errs = []
        for seed in range(40):
            cfg = toy.ToyConfig(n_behavior=50_000, n_target=int(m), seed=seed)
            errs.append(abs(estimate_soft(toy.sample_behavior(cfg), toy.sample_target(cfg)[0], reg).value - v))
        errors.append(np.mean(errs))
    slope = np.polyfit(np.log(sizes), np.log(errors), 1)[0]
    assert -0.7 <= slope <= -0.3
