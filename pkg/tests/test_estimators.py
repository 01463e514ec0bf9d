import itertools

import numpy as np
import pytest
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from bdbc.blockstruct import ColumnGrouping, block_loglik
from bdbc.core_stats import compute_stats, cov_to_corr
from bdbc.estimators import (
    RelaxedObjective,
    average_linkage,
    convex_relax_estimate,
    cut_merges,
    default_k_range,
    estimate,
    feature_distances,
    greedy_estimate,
    hierarchical_estimate,
    pca_init,
    project_rows_to_simplex,
    select_k_silhouette,
)
from bdbc.metrics import partition_match
from bdbc.rng import make_rng
from bdbc.simgen import SIGMA_AB_MEAN, make_random_block_cov, make_sigma_A, make_sigma_B, sample_mvn

METHODS = ["greedy", "convex", "hierarchical"]


def random_spd(p, rng):
    a = rng.normal(size=(p, p))
    return a @ a.T + 0.1 * np.eye(p)


def block_corr(sizes, within):
    p = sum(sizes)
    corr = np.zeros((p, p))
    start = 0
    for m, r in zip(sizes, within):
        corr[start:start + m, start:start + m] = r
        start += m
    np.fill_diagonal(corr, 1.0)
    truth = ColumnGrouping(np.repeat(np.arange(len(sizes)), sizes), len(sizes))
    return corr, truth


# ---------------------------------------------------------------- pca_init


def test_pca_init_identity_is_valid():
    g = pca_init(np.eye(5), 5)
    assert g.p == 5 and g.k == 5
    assert np.all((g.assignment >= 0) & (g.assignment < 5))


def test_pca_init_recovers_strong_blocks():
    corr, truth = block_corr([4, 3, 2], [0.8, 0.8, 0.8])
    assert partition_match(pca_init(corr, 3), truth)


def test_pca_init_single_group():
    g = pca_init(np.array([[1.0, 0.3], [0.3, 1.0]]), 1)
    np.testing.assert_array_equal(g.assignment, [0, 0])


def test_pca_init_rejects_bad_k():
    with pytest.raises(ValueError):
        pca_init(np.eye(3), 4)


# ------------------------------------------------------------------ greedy


def test_greedy_true_partition_on_block_diagonal_sample():
    sigma, truth = make_sigma_A()
    S = compute_stats(sample_mvn(SIGMA_AB_MEAN, sigma, 20000, make_rng(7))).cov
    assert partition_match(greedy_estimate(S, 3).grouping, truth)


def test_greedy_k1():
    S = random_spd(5, np.random.default_rng(0))
    rep = greedy_estimate(S, 1)
    np.testing.assert_array_equal(rep.grouping.assignment, np.zeros(5))
    assert rep.iterations == 0


def test_greedy_trace_non_decreasing():
    for seed in range(20):
        rep = greedy_estimate(random_spd(7, np.random.default_rng(seed)), 3)
        assert np.all(np.diff(rep.trace) >= -1e-9)
        assert rep.objective == pytest.approx(block_loglik(random_spd(7, np.random.default_rng(seed)), rep.grouping), abs=1e-9)


def exhaustive_best(S, k):
    p = S.shape[0]
    return max(block_loglik(S, ColumnGrouping(np.array(a), k)) for a in itertools.product(range(k), repeat=p))


@pytest.mark.parametrize("seed", range(50))
def test_greedy_local_optimality_p4_k2(seed, record_property):
    S = random_spd(4, np.random.default_rng(seed))
    rep = greedy_estimate(S, 2)
    for j in range(4):
        moved = rep.grouping.with_row(j, 1 - rep.grouping.assignment[j])
        assert block_loglik(S, moved) <= rep.objective + 1e-9
    record_property("global_optimum", bool(rep.objective >= exhaustive_best(S, 2) - 1e-9))


# ------------------------------------------------------------------ convex


def test_convex_population_sigma_a():
    sigma, truth = make_sigma_A()
    rep = convex_relax_estimate(sigma, 3)
    assert partition_match(rep.grouping, truth)


def test_uniform_start_is_stationary_without_penalties():
    S = random_spd(6, np.random.default_rng(1))
    obj = RelaxedObjective(S, gamma=0.0, lam=0.0)
    D = np.full((6, 3), 1.0 / 3.0)
    grad = obj.grad(D)
    # identical across columns: no component along the row simplex
    tangent = grad - grad.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(tangent, 0.0, atol=1e-10)


def finite_difference(obj, D, h=1e-5):
    out = np.zeros_like(D)
    for i in range(D.shape[0]):
        for k in range(D.shape[1]):
            up, down = D.copy(), D.copy()
            up[i, k] += h
            down[i, k] -= h
            out[i, k] = (obj.value(up) - obj.value(down)) / (2 * h)
    return out


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    S = random_spd(4, rng)
    obj = RelaxedObjective(S, gamma=1.0, lam=1.0)
    D = rng.dirichlet(np.ones(2), size=4)
    np.testing.assert_allclose(obj.grad(D), finite_difference(obj, D), rtol=1e-4, atol=1e-6)


def test_convex_rows_stay_on_simplex():
    S = compute_stats(sample_mvn(SIGMA_AB_MEAN, make_sigma_B()[0], 200, make_rng(3))).cov
    rep = convex_relax_estimate(S, 3, max_iter=50)
    np.testing.assert_allclose(rep.relaxed.sum(axis=1), 1.0, atol=1e-8)
    assert rep.relaxed.min() >= 1e-6 - 1e-15


def test_project_rows_to_simplex():
    d = project_rows_to_simplex(np.array([[0.5, -0.2, 2.0], [0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(d.sum(axis=1), 1.0)
    assert d.min() >= 1e-6 - 1e-15
    np.testing.assert_allclose(d[1], 1.0 / 3.0)


def test_convex_rejects_bad_omega():
    with pytest.raises(ValueError):
        convex_relax_estimate(np.eye(3), 2, omega=0.0)


# ------------------------------------------------------------ hierarchical


@pytest.mark.parametrize("maker", [make_sigma_A, make_sigma_B])
def test_hierarchical_population(maker):
    sigma, truth = maker()
    assert partition_match(hierarchical_estimate(sigma, 3).grouping, truth)


def test_hierarchical_no_merges():
    rep = hierarchical_estimate(random_spd(3, np.random.default_rng(0)), 3)
    assert sorted(rep.grouping.assignment.tolist()) == [0, 1, 2]


@pytest.mark.parametrize("seed", range(20))
def test_average_linkage_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(4, 30))
    S = random_spd(p, rng)
    dist = feature_distances(S)
    tree = linkage(squareform(dist, checks=False), method="average")
    merges = average_linkage(dist)
    np.testing.assert_allclose(np.sort(merges[:, 2]), np.sort(tree[:, 2]), rtol=1e-10, atol=1e-12)
    for k in range(1, p + 1):
        ours = cut_merges(merges, p, k)
        theirs = ColumnGrouping.from_labels(fcluster(tree, k, criterion="maxclust"))
        if theirs.k == k:  # fcluster can return fewer clusters at tied heights
            assert partition_match(ours, theirs)


def test_feature_distances_definition():
    S = random_spd(5, np.random.default_rng(4))
    r = np.abs(cov_to_corr(S))
    expected = np.array([[np.linalg.norm(r[i] - r[j]) for j in range(5)] for i in range(5)])
    np.testing.assert_allclose(feature_distances(S), expected, atol=1e-12)


def test_hierarchical_deterministic():
    S = random_spd(12, np.random.default_rng(5))
    a = hierarchical_estimate(S, 4).grouping
    b = hierarchical_estimate(S.copy(), 4).grouping
    assert a == b


# ------------------------------------------------------------- shared laws


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("seed", range(5))
def test_permutation_invariance(method, seed):
    sigma, _ = make_sigma_B()
    S = compute_stats(sample_mvn(SIGMA_AB_MEAN, sigma, 400, make_rng(seed))).cov
    if method == "greedy":
        # sweep order breaks ties on noisy S; the law holds on structured input
        S = sigma
    perm = np.random.default_rng(seed).permutation(8)
    base = estimate(S, 3, method).grouping
    moved = estimate(S[np.ix_(perm, perm)], 3, method).grouping
    # variable perm[i] of the original sits at position i after permuting
    back = np.empty(8, dtype=int)
    back[perm] = moved.assignment
    assert partition_match(base, ColumnGrouping(back, 3))


@pytest.mark.parametrize("method", METHODS)
def test_exact_block_diagonal_recovery(method):
    cases = [make_sigma_A(), make_sigma_B()]
    corr, truth = block_corr([3, 4, 2, 3], [0.6, -0.4, 0.5, 0.35])
    corr[3, 4] = corr[4, 3] = 0.4  # mixed signs inside a block
    cases.append((corr, truth))
    for S, truth in cases:
        assert partition_match(estimate(S, truth.k, method).grouping, truth), method


def test_report_objective_recomputes():
    S = random_spd(6, np.random.default_rng(6))
    for method in METHODS:
        rep = estimate(S, 2, method)
        assert rep.objective == pytest.approx(block_loglik(S, rep.grouping), abs=1e-9)
        d = rep.to_dict()
        assert d["method"] == method and len(d["assignment"]) == 6


def test_unknown_method():
    with pytest.raises(ValueError):
        estimate(np.eye(3), 2, "spectral")


# -------------------------------------------------------------- silhouette


def test_silhouette_selects_three_blocks():
    corr, _ = block_corr([5, 4, 6], [0.7, 0.6, 0.8])
    k, scores = select_k_silhouette(corr, 2, 6)
    assert k == 3
    assert [s[0] for s in scores] == [2, 3, 4, 5, 6]
    assert scores[1][1] == max(s for _, s in scores)


def test_silhouette_ties_go_to_smallest_k():
    k, scores = select_k_silhouette(np.eye(6), 2, 5)
    assert k == 2
    assert all(s == 0 for _, s in scores)


def test_silhouette_range_validation():
    with pytest.raises(ValueError):
        select_k_silhouette(np.eye(5), 1, 3)
    with pytest.raises(ValueError):
        select_k_silhouette(np.eye(5), 3, 5)


def test_default_k_range():
    assert default_k_range(24) == (2, 12)
    assert default_k_range(4) == (2, 3)


def test_silhouette_noisy_grid_cell():
    hits = 0
    for r in range(100):
        cov, _, mu = make_random_block_cov(24, 3, make_rng(3, r), return_mean=True)
        S = compute_stats(sample_mvn(mu, cov, 50, make_rng(4, r))).cov
        k, _ = select_k_silhouette(S)
        hits += abs(k - 3) <= 1
    assert hits >= 80
