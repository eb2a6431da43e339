import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from countarf.evalbench.metrics import (
    UndefinedCorrelation,
    eaf_median,
    hypervolume,
    hypervolume_mc,
    rank_average,
    sign_test_p,
    spearman_rho,
    wilcoxon_signed_rank,
)
from countarf.pareto import nondominated_mask

unit_points = lambda d: arrays(float, st.tuples(st.integers(1, 8), st.just(d)), elements=st.floats(0, 1))  # noqa: E731


def _grid_hv(P, ref, m=200):
    """Midpoint-rule oracle for small 2-D and 3-D sets."""
    P = np.asarray(P, float)
    axes = [(np.arange(m) + 0.5) / m * r for r in ref]
    G = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(ref), -1).T
    dom = np.zeros(G.shape[0], dtype=bool)
    for p in P:
        dom |= (G >= p).all(axis=1)
    return dom.mean() * float(np.prod(ref))


def test_single_point_2d_exact():
    assert abs(hypervolume([[0.2, 0.4]], [1.0, 1.0]) - 0.48) <= 1e-12


def test_two_point_staircase():
    # boxes 0.8 * 0.4 and 0.5 * 0.7 overlap in [0.5, 1] x [0.6, 1]
    assert hypervolume([[0.2, 0.6], [0.5, 0.3]], [1.0, 1.0]) == pytest.approx(0.32 + 0.35 - 0.2, abs=1e-12)


def test_empty_and_out_of_box_sets():
    assert hypervolume(np.empty((0, 3))) == 0.0
    assert hypervolume([[1.2, 0.1]], [1.0, 1.0]) == 0.0
    assert hypervolume([[1.0, 0.1]], [1.0, 1.0]) == 0.0


def test_three_dimensional_hand_case():
    P = [[0.5, 0.0, 0.0], [0.0, 0.5, 0.5]]
    # |A| = 0.5, |B| = 0.25 and they share the cube [0.5, 1]^3
    assert hypervolume(P) == pytest.approx(0.5 + 0.25 - 0.125, abs=1e-12)


def test_four_dimensional_single_point():
    assert hypervolume([[0.1, 0.2, 0.3, 0.4]]) == pytest.approx(0.9 * 0.8 * 0.7 * 0.6, abs=1e-12)


def test_matches_grid_oracle():
    rng = np.random.default_rng(0)
    for d in (2, 3):
        for _ in range(5):
            P = np.round(rng.random((6, d)) * 10) / 10
            assert hypervolume(P) == pytest.approx(_grid_hv(P, np.ones(d), m=100 if d == 3 else 400), abs=1e-9)


def test_monte_carlo_estimator_agrees():
    rng = np.random.default_rng(1)
    P = rng.random((5, 3))
    assert hypervolume_mc(P, n_samples=200_000, seed=2) == pytest.approx(hypervolume(P), abs=0.01)


@given(unit_points(3), arrays(float, 3, elements=st.floats(0, 1)))
def test_adding_a_point_never_decreases(P, q):
    assert hypervolume(np.vstack([P, q])) >= hypervolume(P) - 1e-12


@given(unit_points(3))
def test_dominated_points_do_not_matter(P):
    nd = P[nondominated_mask(P)]
    assert hypervolume(P) == pytest.approx(hypervolume(nd), abs=1e-12)
    worse = np.minimum(P[:1] + 0.1, 1.0)
    assert hypervolume(np.vstack([P, worse])) == pytest.approx(hypervolume(P), abs=1e-12)


@given(unit_points(2))
def test_2d_matches_inclusion_exclusion(P):
    # union of rectangles via the sorted staircase by brute force over distinct x cuts
    xs = np.unique(np.append(P[:, 0], 1.0))
    area = 0.0
    for a, b in zip(xs[:-1], xs[1:]):
        ys = P[P[:, 0] <= a, 1]
        if ys.size:
            area += (b - a) * (1.0 - ys.min())
    assert hypervolume(P) == pytest.approx(area, abs=1e-12)


# -- attainment ----------------------------------------------------------------------


def _attained(points, G):
    points = np.atleast_2d(points)
    if points.size == 0:
        return np.zeros(G.shape[0], dtype=bool)
    return ((G[:, None, :] >= points[None, :, :]).all(axis=2)).any(axis=1)


def test_single_run_is_its_own_front():
    run = np.array([[0.1, 0.9], [0.5, 0.5], [0.6, 0.6], [0.9, 0.1]])
    np.testing.assert_array_equal(eaf_median([run]), run[[0, 1, 3]])
    np.testing.assert_array_equal(eaf_median([run, run]), run[[0, 1, 3]])


def test_three_hand_staircases_against_grid_oracle():
    runs = [
        np.array([[0.1, 0.8], [0.4, 0.4], [0.8, 0.1]]),
        np.array([[0.2, 0.6], [0.6, 0.2]]),
        np.array([[0.3, 0.9], [0.5, 0.5], [0.9, 0.3]]),
    ]
    surf = eaf_median(runs)
    # by hand: second-best y over the runs at every x cut
    np.testing.assert_allclose(surf, [[0.2, 0.8], [0.4, 0.6], [0.5, 0.5], [0.6, 0.4], [0.8, 0.2]])
    axis = np.linspace(0, 1, 101)
    G = np.array(np.meshgrid(axis, axis, indexing="ij")).reshape(2, -1).T
    counts = sum(_attained(r, G).astype(int) for r in runs)
    np.testing.assert_array_equal(_attained(surf, G), counts >= 2)


@given(st.lists(arrays(float, st.tuples(st.integers(1, 5), st.just(2)), elements=st.sampled_from([0.0, 0.2, 0.4, 0.6, 0.8])), min_size=1, max_size=5))
def test_eaf_matches_grid_oracle(runs):
    surf = eaf_median(runs)
    axis = np.linspace(0, 1, 11)
    G = np.array(np.meshgrid(axis, axis, indexing="ij")).reshape(2, -1).T
    counts = sum(_attained(r, G).astype(int) for r in runs)
    k = math.ceil(0.5 * len(runs))
    np.testing.assert_array_equal(_attained(surf, G), counts >= k)


# -- ranks -------------------------------------------------------------------------


def test_rank_average_ties():
    np.testing.assert_array_equal(rank_average([3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0])


def test_spearman_cases():
    assert spearman_rho([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman_rho([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert spearman_rho([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    with pytest.raises(UndefinedCorrelation):
        spearman_rho([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman_rho([1, 2], [1, 2, 3])


def test_spearman_matches_scipy_with_ties():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 5, 40).astype(float)
    b = a + rng.integers(0, 3, 40)
    assert spearman_rho(a, b) == pytest.approx(stats.spearmanr(a, b).statistic, abs=1e-12)


@given(st.lists(st.integers(-50, 50), min_size=3, max_size=20, unique=True), st.integers(0, 2**31))
def test_spearman_invariant_under_monotone_transform(ints, seed):
    a = np.array(ints) / 10.0
    b = np.round(a + np.random.default_rng(seed).normal(size=a.size), 2)
    r = spearman_rho(a, b)
    assert spearman_rho(np.exp(a), b ** 3) == pytest.approx(r, abs=1e-12)


# -- signed-rank test ----------------------------------------------------------------


def test_wilcoxon_all_positive():
    r = wilcoxon_signed_rank(np.arange(1, 21) / 10.0)
    assert r.statistic == 210
    assert r.p_greater < 0.001
    assert r.p_less > 0.99


def test_wilcoxon_symmetric_and_zero():
    r = wilcoxon_signed_rank([1, -1, 2, -2, 3, -3, 4, -4])
    assert r.p_two_sided == pytest.approx(1.0, abs=0.05)
    z = wilcoxon_signed_rank([0.0] * 8)
    assert z.p_two_sided == 1.0 and z.p_greater == 1.0 and z.p_less == 1.0


def test_wilcoxon_matches_scipy_normal_approximation():
    rng = np.random.default_rng(4)
    for _ in range(20):
        d = np.round(rng.normal(0.3, 1.0, 25), 1)
        ours = wilcoxon_signed_rank(d)
        for alt, p in (("two-sided", ours.p_two_sided), ("greater", ours.p_greater), ("less", ours.p_less)):
            ref = stats.wilcoxon(d, alternative=alt, zero_method="wilcox", correction=True, method="approx")
            assert p == pytest.approx(ref.pvalue, rel=1e-9)


def test_sign_test():
    assert sign_test_p(10, 10) == pytest.approx(0.5**10)
    assert sign_test_p(0, 10) == pytest.approx(1.0)
    assert sign_test_p(8, 10) == pytest.approx(stats.binomtest(8, 10, alternative="greater").pvalue)
