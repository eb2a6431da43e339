import math

import networkx as nx
import numpy as np
import pytest
from scipy import stats

from countarf.evalbench.dgp import (
    BN_RANDOM,
    PAWELCZYK_MEANS,
    DgpRejected,
    DgpSpec,
    dgp_filter_bn,
    dgp_sample,
    label_rules_ok,
    random_bn,
    true_density,
)
from countarf.forest import ForestParams, fit_forest


def _grid_mass(spec, lo, hi, m=400):
    g1 = np.linspace(lo[0], hi[0], m)
    g2 = np.linspace(lo[1], hi[1], m)
    G = np.array(np.meshgrid(g1, g2, indexing="ij")).reshape(2, -1).T
    return true_density(spec, G).sum() * (g1[1] - g1[0]) * (g2[1] - g2[0])


def test_unknown_dgp():
    with pytest.raises(ValueError):
        DgpSpec("nope")


def test_pawelczyk_labels_and_clusters():
    spec = DgpSpec("pawelczyk")
    d = dgp_sample(spec, 6000, seed=0)
    np.testing.assert_array_equal(d.target, (d.X[:, 1] > 6).astype(float))
    assert (d.target[np.isclose(d.X[:, 1], 7.0, atol=0.05)] == 1).all()
    nearest = np.argmin(((d.X[:, None, :] - PAWELCZYK_MEANS[None]) ** 2).sum(axis=2), axis=1)
    np.testing.assert_allclose(np.bincount(nearest, minlength=3) / 6000, 1 / 3, atol=0.05)


def test_cassini_latent_frequency():
    # the inner blob (Y1 = 0) has x1 sd 0.2 and x2 mean 0; arcs sit near |x2| = cos(x1)
    spec = DgpSpec("cassini")
    d = dgp_sample(spec, 5000, seed=1)
    on_arc = np.abs(d.X[:, 1]) > 0.5 * np.cos(d.X[:, 0])
    assert on_arc.mean() == pytest.approx(2 / 3, abs=0.03)
    # the label marks the upper arc: Y1 = 1 and Y2 = 0
    assert d.target.mean() == pytest.approx(1 / 3, abs=0.03)
    assert (d.X[d.target == 1, 1] > 0).mean() > 0.95


def test_two_sines_closed_form():
    spec = DgpSpec("two_sines")
    x1, x2 = 0.7, 1.1
    phi = stats.norm.pdf
    ref = 0.5 * phi(x1, 0, 3) * phi(x2, math.sin(x1) + 1, 0.3) + 0.5 * phi(x1, 1, 3) * phi(x2, math.sin(x1) - 1, 0.3)
    assert true_density(spec, [x1, x2]) == pytest.approx(ref, rel=1e-12)


def test_pawelczyk_density_at_a_mean():
    spec = DgpSpec("pawelczyk")
    mvn = [stats.multivariate_normal(m, np.eye(2)) for m in PAWELCZYK_MEANS]
    x = PAWELCZYK_MEANS[1]
    assert true_density(spec, x) == pytest.approx(sum(c.pdf(x) for c in mvn) / 3, rel=1e-12)


@pytest.mark.parametrize(
    "name,lo,hi",
    [("cassini", (-3, -2.5), (3, 2.5)), ("two_sines", (-14, -5), (15, 5)), ("pawelczyk", (-16, -6), (6, 11))],
)
def test_2d_densities_integrate_to_one(name, lo, hi):
    assert _grid_mass(DgpSpec(name), lo, hi) == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize(
    "name,box",
    [("cassini", ((-0.5, 0.5), (0.3, 1.5))), ("two_sines", ((-2, 3), (-1, 1))), ("pawelczyk", ((-1, 2), (3, 6)))],
)
def test_sampler_agrees_with_density(name, box):
    # P(X in box) from sampled frequencies and from integrating the density
    spec = DgpSpec(name)
    X = dgp_sample(spec, 40000, seed=2).X
    (a1, b1), (a2, b2) = box
    freq = ((X[:, 0] > a1) & (X[:, 0] < b1) & (X[:, 1] > a2) & (X[:, 1] < b2)).mean()
    assert _grid_mass(spec, (a1, a2), (b1, b2), m=300) == pytest.approx(freq, abs=0.01)


def test_random_bn_structure():
    for seed in range(20):
        bn = random_bn(10, seed)
        g = nx.DiGraph([(a, b) for b in range(bn.n_nodes) for a in bn.parents[b]])
        g.add_nodes_from(range(bn.n_nodes))
        assert nx.is_directed_acyclic_graph(g)
        assert bn.categorical[0]
        assert sum(bn.categorical[1:]) == 2
        for w in bn.weights:
            if w:
                assert np.abs(w).sum() == pytest.approx(1.0)


def test_bn_spec_round_trip():
    spec = DgpSpec(BN_RANDOM, 5, seed=3)
    back = DgpSpec.from_dict(spec.to_dict())
    assert back.to_dict() == spec.to_dict()
    x = dgp_sample(spec, 5, seed=0).X
    np.testing.assert_array_equal(true_density(spec, x), true_density(back, x))


def test_bn_schema_and_labels():
    spec = DgpSpec(BN_RANDOM, 10, seed=4)
    d = dgp_sample(spec, 500, seed=0)
    assert d.p == 10
    assert set(np.unique(d.target)) <= {0.0, 1.0}
    for j, f in enumerate(d.schema.features):
        if f.is_categorical:
            assert set(np.unique(d.X[:, j])) <= {0.0, 1.0}


def _mixed_proposal(spec, X, n, seed):
    """Broad Gaussian on continuous features, uniform on binary ones; returns draws and q."""
    cat = np.array(spec.bn.categorical[1:])
    rng = np.random.default_rng(seed)
    mu, sd = X.mean(axis=0), 1.5 * X.std(axis=0)
    Z = mu + sd * rng.normal(size=(n, X.shape[1]))
    Z[:, cat] = rng.integers(0, 2, size=(n, int(cat.sum())))
    q = np.where(cat, 0.5, stats.norm.pdf(Z, mu, sd)).prod(axis=1)
    return Z, q


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bn_density_normalizes_and_matches_the_sampler(seed):
    spec = DgpSpec(BN_RANDOM, 4, seed=seed)
    X = dgp_sample(spec, 40000, seed=1).X
    Z, q = _mixed_proposal(spec, X, 400000, seed=2)
    w = true_density(spec, Z) / q
    assert w.mean() == pytest.approx(1.0, abs=0.03)
    # probability of an event: first feature below its median
    t = np.median(X[:, 0])
    assert (w * (Z[:, 0] <= t)).mean() == pytest.approx((X[:, 0] <= t).mean(), abs=0.03)


@pytest.mark.parametrize(
    "label_mean,acc,pred_mean,thr,ok",
    [
        (0.2, 0.99, 0.5, 0.9, False),
        (0.5, 0.99, 0.5, 0.9, True),
        (0.5, 0.90, 0.5, 0.95, False),
        (0.5, 0.90, 0.5, 0.85, True),
        (0.5, 0.99, 0.8, 0.9, False),
    ],
)
def test_label_rules(label_mean, acc, pred_mean, thr, ok):
    assert label_rules_ok(label_mean, acc, pred_mean, thr) is ok


def _trainer(d, y):
    return fit_forest(d, y, ForestParams(num_trees=15), seed=0)


def test_filter_accepts_and_freezes_the_seed():
    # the generator's label signal is weak, so the accuracy bar here is modest
    spec = dgp_filter_bn(5, _trainer, seed=1, n=600, accuracy_threshold=0.6)
    assert spec.name == BN_RANDOM
    again = dgp_filter_bn(5, _trainer, seed=1, n=600, accuracy_threshold=0.6)
    assert again.seed == spec.seed and again.to_dict() == spec.to_dict()
    # the accepted network meets the rules on a fresh sample too
    train, test = dgp_sample(spec, 600, seed=11), dgp_sample(spec, 600, seed=12)
    pred = _trainer(train, train.target)(test.X) > 0.5
    assert 0.3 < train.target.mean() < 0.7
    assert (pred == (test.target == 1)).mean() > 0.55


def test_filter_gives_up():
    with pytest.raises(DgpRejected):
        dgp_filter_bn(3, _trainer, seed=0, n=300, accuracy_threshold=1.0, max_tries=3)
