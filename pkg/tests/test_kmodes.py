import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from catmix.dataset import CategoricalDataset
from catmix.kmodes import (
    KModesConfig,
    KModesModel,
    cluster_profiles,
    fit_kmodes,
    silhouette_scores,
    silhouette_width,
    simple_matching_distance,
    sweep_k,
    total_within_cluster_dissimilarity,
)
from oracles import brute_force_two_partition, naive_silhouette

SEPARATED = np.array([[1, 1, 1]] * 3 + [[0, 0, 0]] * 3)


@pytest.mark.parametrize("a, b, d", [
    ([1, 0, 1], [1, 0, 1], 0),
    ([1, 0, 1], [1, 1, 0], 2),
    ([0, 0, 0], [1, 1, 1], 3),
])
def test_simple_matching_distance(a, b, d):
    assert simple_matching_distance(a, b) == d
    assert simple_matching_distance(b, a) == d


def test_distance_length_mismatch():
    with pytest.raises(ValueError):
        simple_matching_distance([1, 0], [1, 0, 1])


def test_identical_rows_single_cluster():
    x = np.tile([1, 0, 1, 1], (5, 1))
    m = fit_kmodes(x, KModesConfig(k=1))
    assert m.cost == 0
    assert m.centroids.tolist() == [[1, 0, 1, 1]]


def test_separated_duplicates_two_clusters():
    m = fit_kmodes(SEPARATED, KModesConfig(k=2, seed=3))
    assert m.cost == 0
    assert sorted(map(tuple, m.centroids.tolist())) == [(0, 0, 0), (1, 1, 1)]
    mean, scores = silhouette_width(m, SEPARATED)
    assert mean == 1.0
    assert np.all(scores == 1.0)


def test_k_larger_than_n_rejected():
    with pytest.raises(ValueError):
        fit_kmodes(SEPARATED, KModesConfig(k=7))


@pytest.mark.parametrize("bad", [dict(k=0), dict(k=2, max_iter=0), dict(k=2, n_restarts=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        KModesConfig(**bad)


def test_hand_dissimilarity():
    x = np.array([[1, 0], [1, 1], [0, 1]])
    model = KModesModel(np.array([[1, 1]]), np.zeros(3, dtype=int), 2, 1, True)
    assert total_within_cluster_dissimilarity(model, x) == 2


def test_singletons_have_zero_dissimilarity():
    rng = np.random.default_rng(5)
    x = rng.integers(0, 2, (6, 4))
    x[:, 0] = [0, 1, 0, 1, 0, 1]
    x[:, 1] = [0, 0, 1, 1, 0, 0]
    x[:, 2] = [0, 0, 0, 0, 1, 1]  # every row distinct
    m = fit_kmodes(x, KModesConfig(k=6, n_restarts=3))
    assert m.cost == 0
    assert total_within_cluster_dissimilarity(m, x) == 0


def test_dissimilarity_shape_mismatch():
    m = fit_kmodes(SEPARATED, KModesConfig(k=2))
    with pytest.raises(ValueError):
        total_within_cluster_dissimilarity(m, SEPARATED[:4])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30).flatmap(lambda n: arrays(np.int8, (n, 5), elements=st.integers(0, 1))),
       st.integers(1, 4), st.integers(0, 2 ** 16))
def test_fit_invariants(x, k, seed):
    n_unique = np.unique(x, axis=0).shape[0]
    k = min(k, n_unique)
    m = fit_kmodes(x, KModesConfig(k=k, n_restarts=3, seed=seed))
    # cost recomputed from scratch
    assert m.cost == total_within_cluster_dissimilarity(m, x)
    # trace never increases
    assert all(b <= a for a, b in zip(m.cost_trace, m.cost_trace[1:]))
    # centroids are modes of their members, ties resolved to 1
    for c in range(m.k):
        members = x[m.assignment == c]
        if members.shape[0]:
            expected = (2 * members.sum(axis=0) >= members.shape[0]).astype(int)
            np.testing.assert_array_equal(m.centroids[c], expected)
    # stable assignment: no member strictly closer to another centroid
    if m.converged:
        d = (x[:, None, :] != m.centroids[None, :, :]).sum(axis=2)
        own = d[np.arange(x.shape[0]), m.assignment]
        assert np.all(own <= d.min(axis=1))


def test_brute_force_small_instances():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 15:
        n, j = rng.integers(3, 7), rng.integers(1, 5)
        x = rng.integers(0, 2, (n, j))
        if np.unique(x, axis=0).shape[0] < 2:
            continue
        m = fit_kmodes(x, KModesConfig(k=2, n_restarts=50, seed=int(rng.integers(1 << 30))))
        assert m.cost == brute_force_two_partition(x)
        checked += 1


def test_cost_invariant_under_row_permutation():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.integers(0, 2, (10, 4))
        perm = rng.permutation(10)
        a = fit_kmodes(x, KModesConfig(k=2, n_restarts=60, seed=1)).cost
        b = fit_kmodes(x[perm], KModesConfig(k=2, n_restarts=60, seed=1)).cost
        assert a == b == brute_force_two_partition(x)


def test_silhouette_hand_case():
    x = np.array([[0, 0, 0], [0, 0, 0], [1, 1, 1], [1, 1, 0]])
    labels = np.array([0, 0, 1, 1])
    expected = (1 + 1 + 2 / 3 + 1 / 2) / 4
    scores = silhouette_scores(labels, x)
    assert scores.mean() == pytest.approx(expected, abs=1e-12)
    assert scores.mean() == pytest.approx(0.7917, abs=1e-4)


def test_silhouette_singleton_scores_zero():
    x = np.array([[0, 0], [0, 1], [1, 1]])
    s = silhouette_scores([0, 0, 1], x)
    assert s[2] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 14).flatmap(lambda n: st.tuples(
    arrays(np.int8, (n, 4), elements=st.integers(0, 1)),
    arrays(np.int64, (n,), elements=st.integers(0, 2)))))
def test_silhouette_matches_loop_oracle(case):
    x, labels = case
    if np.unique(labels).size < 2:
        return
    np.testing.assert_allclose(silhouette_scores(labels, x), naive_silhouette(x, labels), atol=1e-12)


def test_silhouette_needs_two_clusters():
    m = fit_kmodes(SEPARATED, KModesConfig(k=1))
    with pytest.raises(ValueError):
        silhouette_width(m, SEPARATED)


def test_sweep_separated_data():
    rows = sweep_k(SEPARATED, range(1, 5), KModesConfig(k=1, seed=4))
    costs = [r["cost"] for r in rows]
    assert costs[0] > 0
    assert costs[1:] == [0, 0, 0]
    assert rows[0]["silhouette"] is None
    assert rows[1]["silhouette"] == 1.0


def test_sweep_is_deterministic():
    x = np.random.default_rng(0).integers(0, 2, (40, 6))
    cfg = KModesConfig(k=1, seed=17, n_restarts=4)
    assert sweep_k(x, range(1, 6), cfg) == sweep_k(x, range(1, 6), cfg)


def test_sweep_empty_range():
    with pytest.raises(ValueError):
        sweep_k(SEPARATED, [], KModesConfig(k=1))


def test_profiles_are_within_cluster_means():
    x = np.random.default_rng(1).integers(0, 2, (30, 5))
    ds = CategoricalDataset.from_array(x)
    m = fit_kmodes(ds, KModesConfig(k=3, seed=2))
    prof = cluster_profiles(m, ds)
    for c in range(3):
        members = [row for row, lab in zip(x.tolist(), m.assignment) if lab == c]
        oracle = [sum(col) / len(members) for col in zip(*members)]
        np.testing.assert_allclose(prof[c], oracle, atol=1e-12)


def test_same_seed_same_model():
    x = np.random.default_rng(9).integers(0, 2, (50, 6))
    a = fit_kmodes(x, KModesConfig(k=3, seed=8))
    b = fit_kmodes(x, KModesConfig(k=3, seed=8))
    np.testing.assert_array_equal(a.assignment, b.assignment)
    assert a.cost_trace == b.cost_trace
