import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from countarf.arf import (
    ArfModel,
    ArfParams,
    CategorySet,
    ConditionSet,
    FixedValue,
    InfeasibleCondition,
    Interval,
    conditional_density,
    fit_arf,
    forde_density,
    forge_sample,
    load_arf,
    naive_synth,
    save_arf,
    update_weights,
)
from countarf.forest import dumps
from countarf.tabular import CATEGORICAL, Dataset, Feature, FeatureSchema

ONE_LEAF = ArfParams(num_trees=1, min_node_size=10**6)


def _normal_data(n=500, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(FeatureSchema((Feature("x"),)), rng.normal(size=(n, 1)))


def _with_leaf_params(m: ArfModel, mu, sd) -> ArfModel:
    """Copy of a one-feature model with overridden per-leaf normal parameters."""
    return dataclasses.replace(m, mu=np.asarray(mu, float).reshape(-1, 1), sd=np.asarray(sd, float).reshape(-1, 1))


# -- naive synthesis ------------------------------------------------------------


def test_naive_synth_breaks_dependence():
    rng = np.random.default_rng(0)
    x = rng.normal(size=2000)
    d = Dataset(FeatureSchema((Feature("a"), Feature("b"))), np.column_stack([x, 2 * x + 1]))
    s = naive_synth(d, 2000, seed=1)
    assert abs(np.corrcoef(s.X.T)[0, 1]) < 0.1


def test_naive_synth_draws_observed_values():
    d = _normal_data(50)
    s = naive_synth(d, 300, seed=2)
    assert np.isin(s.X[:, 0], d.X[:, 0]).all()
    assert naive_synth(d, 0).n == 0


def test_naive_synth_rejects_empty():
    with pytest.raises(ValueError):
        naive_synth(Dataset(FeatureSchema((Feature("x"),)), np.empty((0, 1))), 5)


# -- training -----------------------------------------------------------------


def test_independent_features_converge_immediately():
    rng = np.random.default_rng(1)
    d = Dataset(FeatureSchema((Feature("a"), Feature("b"))), rng.uniform(size=(2000, 2)))
    m = fit_arf(d, ArfParams(num_trees=20), seed=0)
    assert m.rounds <= 1
    assert m.converged and m.oob_accuracy <= 0.55


def test_dependent_data_converges(cassini):
    _, _, _, arf = cassini
    assert arf.converged
    assert arf.oob_accuracy <= 0.55
    assert arf.accuracy_history[0] > arf.accuracy_history[-1]


def test_weights_are_share_of_real_rows_over_trees(cassini):
    _, data, _, arf = cassini
    assert arf.weight.sum() == pytest.approx(1.0, abs=1e-9)
    assert (arf.weight >= 0).all()
    T = arf.forest.n_trees
    for t in range(T):
        sl = slice(arf.offsets[t], arf.offsets[t + 1])
        assert arf.coverage[sl].sum() == data.n
        np.testing.assert_allclose(arf.weight[sl], arf.coverage[sl] / data.n / T)


def test_leaf_distribution_invariants(mixed):
    _, _, arf = mixed
    cont = np.flatnonzero(~arf.schema.categorical_mask)
    assert (arf.sd[:, cont] > 0).all()
    for j, prob in arf.cat_prob.items():
        np.testing.assert_allclose(prob.sum(axis=1), 1.0, atol=1e-9)
        assert (prob >= 0).all()


def test_fit_is_deterministic():
    d = _normal_data(300)
    a = fit_arf(d, ArfParams(num_trees=5), seed=4)
    b = fit_arf(d, ArfParams(num_trees=5), seed=4)
    assert dumps(a.to_dict()) == dumps(b.to_dict())


def test_parallel_fit_matches_serial():
    d = _normal_data(300)
    a = fit_arf(d, ArfParams(num_trees=4), seed=4)
    b = fit_arf(d, ArfParams(num_trees=4), seed=4, n_jobs=2)
    assert dumps(a.to_dict()) == dumps(b.to_dict())


def test_non_convergence_is_flagged(cassini):
    _, data, _, _ = cassini
    m = fit_arf(data, ArfParams(num_trees=5, delta=0.0, max_rounds=0), seed=0)
    assert not m.converged
    assert m.rounds == 0


def test_round_trip_serialization(tmp_path, mixed):
    _, _, arf = mixed
    path = tmp_path / "arf.json"
    save_arf(arf, path)
    back = load_arf(path)
    X = forge_sample(arf, 50, seed=0).X
    np.testing.assert_array_equal(forde_density(arf, X), forde_density(back, X))
    assert dumps(back.to_dict()) == dumps(arf.to_dict())


def test_fit_rejects_missing_values():
    d = Dataset(FeatureSchema((Feature("x"),)), np.array([[0.0], [np.nan]]))
    with pytest.raises(ValueError):
        fit_arf(d)


# -- density --------------------------------------------------------------------


def test_single_leaf_categorical_density():
    schema = FeatureSchema((Feature("c", CATEGORICAL, ("a", "b")),))
    d = Dataset(schema, np.array([[0.0], [1.0]] * 50))
    m = fit_arf(d, ONE_LEAF, seed=0)
    assert m.n_leaves == 1
    assert forde_density(m, [0.0]) == pytest.approx(0.5)
    assert forde_density(m, [1.0]) == pytest.approx(0.5)


def test_single_leaf_normal_density_matches_closed_form():
    d = _normal_data()
    m = fit_arf(d, ONE_LEAF, seed=0)
    mu, sd = d.X[:, 0].mean(), d.X[:, 0].std()
    x = np.linspace(-3, 3, 13)[:, None]
    np.testing.assert_allclose(forde_density(m, x), stats.norm.pdf(x[:, 0], mu, sd), rtol=1e-10)


def test_identical_components_give_their_common_value():
    m = fit_arf(_normal_data(), ArfParams(num_trees=3, min_node_size=10**6), seed=0)
    single = fit_arf(_normal_data(), ONE_LEAF, seed=0)
    assert forde_density(m, [0.3]) == pytest.approx(forde_density(single, [0.3]))


def test_unseen_level_has_small_positive_density(mixed):
    _, _, arf = mixed
    x = forge_sample(arf, 1, seed=0).X[0]
    assert forde_density(arf, x) > 0
    bad = x.copy()
    bad[3] = 7
    with pytest.raises((ValueError, IndexError)):
        forde_density(arf, bad)


def test_density_integrates_to_one(cassini):
    _, data, _, arf = cassini
    lo = data.X.min(axis=0) - 1.0
    hi = data.X.max(axis=0) + 1.0
    g1 = np.linspace(lo[0], hi[0], 301)
    g2 = np.linspace(lo[1], hi[1], 301)
    G = np.array(np.meshgrid(g1, g2, indexing="ij")).reshape(2, -1).T
    dens = forde_density(arf, np.column_stack([G, np.zeros(len(G))]), marginalize=[arf.prediction_column])
    mass = dens.sum() * (g1[1] - g1[0]) * (g2[1] - g2[0])
    assert mass == pytest.approx(1.0, abs=0.05)


def test_marginalized_column_is_ignored(cassini):
    _, data, _, arf = cassini
    x = np.array([[0.1, 0.9, 0.0], [0.1, 0.9, 0.7]])
    d = forde_density(arf, x, marginalize=[2])
    assert d[0] == d[1]


def test_marginal_density_matches_numerical_integration(cassini):
    _, _, _, arf = cassini
    x = np.array([0.1, 0.9])
    # yhat lies in [0, 1]; leaves beyond it carry no real rows but may extend past it
    lo = min(arf.mu[:, 2].min() - 8 * arf.sd[:, 2].max(), 0.0)
    hi = max(arf.mu[:, 2].max() + 8 * arf.sd[:, 2].max(), 1.0)
    grid = np.linspace(lo, hi, 40001)
    rows = np.column_stack([np.tile(x, (grid.size, 1)), grid])
    numeric = np.trapezoid(forde_density(arf, rows), grid)
    exact = forde_density(arf, np.append(x, 0.0), marginalize=[2])
    assert exact == pytest.approx(numeric, rel=1e-3)


def test_density_rejects_wrong_width(cassini):
    _, _, _, arf = cassini
    with pytest.raises(ValueError):
        forde_density(arf, [0.0, 0.0])


# -- weight updates -------------------------------------------------------------


def test_empty_conditions_leave_weights_unchanged(mixed):
    _, _, arf = mixed
    np.testing.assert_array_equal(update_weights(arf, ConditionSet()), arf.weight)


def test_update_weights_hand_example():
    # two single-leaf trees, weights (0.5, 0.5), interval masses (0.2, 0.8):
    # (0.1, 0.4) / 0.5
    base = fit_arf(_normal_data(), ArfParams(num_trees=2, min_node_size=10**6), seed=0)
    a = stats.norm.ppf(0.2)
    m = _with_leaf_params(base, [0.0, a - stats.norm.ppf(0.8)], [1.0, 1.0])
    np.testing.assert_allclose(m.weight, [0.5, 0.5])
    w = update_weights(m, ConditionSet({0: Interval(-np.inf, a)}))
    np.testing.assert_allclose(w, [0.2, 0.8], rtol=1e-10)


def test_update_weights_matches_scipy_oracle(cassini):
    _, _, _, arf = cassini
    cond = Interval(-0.2, 0.4)
    w = update_weights(arf, ConditionSet({0: cond}))
    lo = np.maximum(arf.trunc_lo[:, 0], cond.lo)
    hi = np.minimum(arf.trunc_hi[:, 0], cond.hi)
    mu, sd = arf.mu[:, 0], arf.sd[:, 0]
    num = stats.norm.cdf(np.maximum(hi, lo), mu, sd) - stats.norm.cdf(lo, mu, sd)
    den = stats.norm.cdf(arf.trunc_hi[:, 0], mu, sd) - stats.norm.cdf(arf.trunc_lo[:, 0], mu, sd)
    ref = arf.weight * num / den
    np.testing.assert_allclose(w, ref / ref.sum(), atol=1e-9)


def test_point_condition_uses_leaf_admissibility(cassini):
    _, _, _, arf = cassini
    w = update_weights(arf, ConditionSet({1: FixedValue(0.25)}))
    inside = (arf.trunc_lo[:, 1] < 0.25) & (arf.trunc_hi[:, 1] >= 0.25)
    ref = arf.weight * inside
    np.testing.assert_allclose(w, ref / ref.sum(), atol=1e-12)


def test_infeasible_condition_raises():
    schema = FeatureSchema((Feature("x"),))
    d = Dataset(schema, np.random.default_rng(0).uniform(size=(200, 1)))
    m = fit_arf(d, ArfParams(num_trees=3, finite_bounds=True), seed=0)
    with pytest.raises(InfeasibleCondition):
        update_weights(m, ConditionSet({0: Interval(5.0, 6.0)}))


def test_invalid_conditions_are_rejected(mixed):
    _, _, arf = mixed
    with pytest.raises(ValueError):
        update_weights(arf, ConditionSet({3: Interval(0, 1)}))
    with pytest.raises(ValueError):
        update_weights(arf, ConditionSet({0: CategorySet({0})}))
    with pytest.raises(ValueError):
        update_weights(arf, ConditionSet({3: CategorySet({5})}))
    with pytest.raises(ValueError):
        update_weights(arf, ConditionSet({42: FixedValue(0.0)}))
    with pytest.raises(ValueError):
        Interval(1.0, 0.0)
    with pytest.raises(ValueError):
        CategorySet(set())


# -- sampling -----------------------------------------------------------------


def test_unconditional_sample_moments():
    m = fit_arf(_normal_data(2000, seed=3), ArfParams(num_trees=10), seed=0)
    x = forge_sample(m, 5000, seed=1).X[:, 0]
    assert abs(x.mean()) < 0.1
    assert abs(x.std() - 1.0) < 0.15


def test_all_fixed_gives_identical_rows(mixed):
    _, _, arf = mixed
    vals = [0.5, -1.0, 0.25, 2.0, 1.0, 0.6]
    out = forge_sample(arf, 20, ConditionSet({j: FixedValue(v) for j, v in enumerate(vals)}), seed=0).X
    assert (out == np.array(vals)).all()


def test_conditions_hold_for_every_row(mixed):
    _, _, arf = mixed
    c = ConditionSet({0: Interval(0.5, 1.0), 3: CategorySet({0, 2}), 4: FixedValue(1.0), 5: Interval(0.5, 1.0)})
    X = forge_sample(arf, 2000, c, seed=3).X
    assert all(c.satisfied_by(x) for x in X)


def test_category_set_matches_renormalized_masses(mixed):
    _, _, arf = mixed
    c = ConditionSet({3: CategorySet({0, 2})})
    n = 5000
    X = forge_sample(arf, n, c, seed=7).X
    w = update_weights(arf, c)
    prob = arf.cat_prob[3][:, [0, 2]]
    live = w > 0
    expected = (w[live, None] * prob[live] / prob[live].sum(axis=1, keepdims=True)).sum(axis=0)
    observed = np.array([(X[:, 3] == 0).sum(), (X[:, 3] == 2).sum()])
    assert observed.sum() == n
    assert stats.chisquare(observed, expected * n).pvalue > 0.01


def test_sampling_is_deterministic(mixed):
    _, _, arf = mixed
    a = forge_sample(arf, 100, seed=9).X
    b = forge_sample(arf, 100, seed=9).X
    np.testing.assert_array_equal(a, b)


@given(lo=st.floats(-2, 2), width=st.floats(0.01, 2), seed=st.integers(0, 2**31))
def test_interval_condition_is_a_hard_constraint(cassini, lo, width, seed):
    _, _, _, arf = cassini
    c = ConditionSet({0: Interval(lo, lo + width)})
    try:
        X = forge_sample(arf, 50, c, seed=seed).X
    except InfeasibleCondition:
        return
    assert np.all((X[:, 0] >= lo) & (X[:, 0] <= lo + width))


# -- conditional density ------------------------------------------------------------


def test_conditional_density_without_conditions_is_the_joint(mixed):
    _, _, arf = mixed
    x = forge_sample(arf, 1, seed=5).X[0]
    assert conditional_density(arf, x, ConditionSet()) == pytest.approx(forde_density(arf, x), rel=1e-12)


def test_conditional_density_renormalizes_by_interval_mass():
    d = _normal_data()
    m = fit_arf(d, ONE_LEAF, seed=0)
    mu, sd = m.mu[0, 0], m.sd[0, 0]
    c = ConditionSet({0: Interval(-0.5, 1.0)})
    q = stats.norm.cdf(1.0, mu, sd) - stats.norm.cdf(-0.5, mu, sd)
    assert conditional_density(m, [0.2], c) == pytest.approx(forde_density(m, [0.2]) / q, rel=1e-9)


def test_fixed_feature_contributes_factor_one(cassini):
    _, _, _, arf = cassini
    x = np.array([0.1, 0.9, 0.4])
    c = ConditionSet({1: FixedValue(0.9)})
    w = update_weights(arf, c)
    g = arf.leaf_index(x[None, :])[0]
    ref = 0.0
    for gl in g:
        f = 1.0
        for j in (0, 2):
            f *= np.exp(arf._log_factor(j, x[j : j + 1], np.array([gl]))[0])
        ref += w[gl] * f
    assert conditional_density(arf, x, c) == pytest.approx(ref, rel=1e-10)


def test_conditional_density_rejects_violating_instance(cassini):
    _, _, _, arf = cassini
    with pytest.raises(ValueError):
        conditional_density(arf, np.array([0.1, 0.9, 0.4]), ConditionSet({0: Interval(1.0, 2.0)}))
