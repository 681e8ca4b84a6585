import math
from itertools import combinations

import numpy as np
import pytest

from alfa.clustering import (
    Cluster,
    agglomerative_cluster,
    cluster_fast,
    cluster_indices,
    cluster_similarity,
    complete_link_reference,
    connectivity_groups,
    prediction_similarity,
    similarity_matrix,
)
from alfa.errors import InvalidGamma

from conftest import partition, pred, random_instance


def shifted(d):
    return (d, 0.0, 10.0 + d, 10.0)


def merge_oracle(sim, tau):
    """Complete-link merge sequence replayed on frozensets."""
    clusters = [frozenset([i]) for i in range(len(sim))]
    while True:
        best, pair = -1.0, None
        for a, b in combinations(sorted(clusters, key=min), 2):
            s = min(sim[i][j] for i in a for j in b)
            if s > best:
                best, pair = s, (a, b)
        if pair is None or best < tau:
            return set(clusters)
        clusters.remove(pair[0])
        clusters.remove(pair[1])
        clusters.append(pair[0] | pair[1])


class TestPredictionSimilarity:
    def test_identical_predictions(self):
        p = pred(1, (0, 0, 10, 10), (0.1, 0.3, 0.6))
        q = pred(2, (0, 0, 10, 10), (0.1, 0.3, 0.6))
        assert prediction_similarity(p, q, 0.5) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_boxes(self):
        p = pred(1, (0, 0, 10, 10), (0.1, 0.3, 0.6))
        q = pred(2, (20, 20, 30, 30), (0.1, 0.3, 0.6))
        assert prediction_similarity(p, q, 0.5) == 0.0

    def test_formula(self):
        # IoU of boxes shifted by 6 is 4/16; BC of (1, 0) and (0.6561, 0.3439) is 0.81
        p = pred(1, shifted(0), (0.0, 1.0, 0.0))
        q = pred(2, shifted(6), (0.0, 0.6561, 0.3439))
        assert prediction_similarity(p, q, 0.5) == pytest.approx(0.45, abs=1e-9)
        assert prediction_similarity(p, q, 0.5) == pytest.approx(0.25**0.5 * 0.81**0.5, abs=1e-12)

    def test_same_detector_is_zero(self):
        p = pred(1, (0, 0, 10, 10), (0.1, 0.3, 0.6), 0)
        q = pred(1, (0, 0, 10, 10), (0.1, 0.3, 0.6), 1)
        assert prediction_similarity(p, q, 0.5) == 0.0

    def test_disjoint_classes_is_zero(self):
        p = pred(1, (0, 0, 10, 10), (0.0, 1.0, 0.0))
        q = pred(2, (0, 0, 10, 10), (0.0, 0.0, 1.0))
        assert prediction_similarity(p, q, 0.3) == 0.0

    def test_iou_only(self):
        p = pred(1, shifted(0), (0.0, 1.0, 0.0))
        q = pred(2, shifted(6), (0.0, 0.0, 1.0))
        assert prediction_similarity(p, q, 0.5, use_class_scores=False) == pytest.approx(0.25)

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 1.2])
    def test_bad_gamma(self, gamma):
        p = pred(1, shifted(0), (0.0, 1.0, 0.0))
        with pytest.raises(InvalidGamma):
            prediction_similarity(p, p, gamma)

    def test_matrix_agrees_with_scalar(self, rng):
        preds = random_instance(rng, 40, 3, k=4)
        boxes = np.array([p.box.as_tuple() for p in preds])
        scores = np.array([p.scores.values for p in preds])
        ids = np.array([p.detector_id for p in preds])
        for gamma in (0.2, 0.5, 0.8):
            m = similarity_matrix(boxes, scores, ids, gamma)
            for i, j in combinations(range(len(preds)), 2):
                s = prediction_similarity(preds[i], preds[j], gamma)
                assert m[i, j] == pytest.approx(s, abs=1e-12)
                assert m[i, j] == m[j, i]


class TestClusterSimilarity:
    def test_singletons(self):
        p = pred(1, shifted(0), (0.1, 0.5, 0.4))
        q = pred(2, shifted(3), (0.2, 0.4, 0.4))
        assert cluster_similarity(Cluster((p,)), Cluster((q,)), 0.4) == prediction_similarity(p, q, 0.4)

    def test_shared_detector_across_sides(self):
        a = Cluster((pred(1, shifted(0), (0, 1, 0), 0), pred(2, shifted(1), (0, 1, 0))))
        b = Cluster((pred(1, shifted(0.5), (0, 1, 0), 1),))
        assert cluster_similarity(a, b, 0.5) == 0.0

    def test_minimum_over_pairs(self):
        # IoU-only similarities 0.6 and 0.3 against the singleton
        c = pred(3, shifted(0), (0, 1, 0))
        a = pred(1, shifted(2.5), (0, 1, 0))
        b = pred(2, shifted(7 / 1.3), (0, 1, 0))
        sims = [prediction_similarity(x, c, 0.5, use_class_scores=False) for x in (a, b)]
        assert sims == pytest.approx([0.6, 0.3], abs=1e-12)
        got = cluster_similarity(Cluster((a, b)), Cluster((c,)), 0.5, use_class_scores=False)
        assert got == pytest.approx(0.3, abs=1e-12)


class TestAgglomerative:
    SIM3 = np.array([[0.0, 0.9, 0.8], [0.9, 0.0, 0.7], [0.8, 0.7, 0.0]])

    def test_empty(self):
        assert agglomerative_cluster([], 0.5, 0.5) == []
        assert cluster_fast([], 0.5, 0.5) == []

    def test_same_detector_never_merges(self):
        p = pred(1, shifted(0), (0.1, 0.9), 0)
        q = pred(1, shifted(0), (0.1, 0.9), 1)
        for fn in (agglomerative_cluster, cluster_fast):
            assert len(fn([p, q], 0.01, 0.5)) == 2

    def test_three_way_example(self):
        expected = {frozenset({0, 1}), frozenset({2})}
        assert merge_oracle(self.SIM3, 0.75) == expected
        assert {frozenset(c) for c in complete_link_reference(self.SIM3, 0.75)} == expected
        assert {frozenset(c) for c in cluster_indices(self.SIM3, 0.75)} == expected

    def test_tie_break_prefers_smallest_keys(self):
        a = pred(1, shifted(0), (0.1, 0.9))
        b = pred(2, shifted(1), (0.1, 0.9), 0)
        c = pred(2, shifted(1), (0.1, 0.9), 1)
        for order in ([a, b, c], [c, b, a], [b, c, a]):
            for fn in (agglomerative_cluster, cluster_fast):
                assert partition(fn(order, 0.5, 0.5)) == {
                    frozenset({(1, 0), (2, 0)}),
                    frozenset({(2, 1)}),
                }

    def test_random_matrices_match_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 9))
            sim = rng.uniform(0, 1, (n, n))
            sim = np.triu(sim, 1)
            sim = sim + sim.T
            tau = rng.uniform(0.2, 0.8)
            expected = merge_oracle(sim, tau)
            assert {frozenset(c) for c in complete_link_reference(sim, tau)} == expected
            assert {frozenset(c) for c in cluster_indices(sim, tau)} == expected

    @pytest.mark.parametrize("seed", range(25))
    def test_fast_matches_reference_and_invariants(self, seed):
        rng = np.random.default_rng(seed)
        n_det = int(rng.integers(2, 4))
        preds = random_instance(rng, int(rng.integers(1, 40)), n_det)
        tau, gamma = rng.uniform(0.3, 0.9), rng.uniform(0.1, 0.9)
        ref = agglomerative_cluster(preds, tau, gamma)
        fast = cluster_fast(preds, tau, gamma)
        assert partition(ref) == partition(fast)
        assert math.ceil(len(preds) / n_det) <= len(fast) <= len(preds)
        for c in fast:
            assert len(c.detector_ids) == len(c)
            for p, q in combinations(c, 2):
                assert prediction_similarity(p, q, gamma) >= tau
        for a, b in combinations(fast, 2):
            assert cluster_similarity(a, b, gamma) < tau

    @pytest.mark.parametrize("seed", range(10))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(100 + seed)
        preds = random_instance(rng, 30, 3)
        base = partition(cluster_fast(preds, 0.5, 0.4))
        for _ in range(5):
            shuffled = [preds[i] for i in rng.permutation(len(preds))]
            assert partition(cluster_fast(shuffled, 0.5, 0.4)) == base
            assert partition(agglomerative_cluster(shuffled, 0.5, 0.4)) == base


class TestConnectivityGroups:
    def test_no_edges(self):
        preds = [pred(i, (20.0 * i, 0, 20.0 * i + 10, 10), (0.2, 0.8)) for i in range(1, 5)]
        groups = connectivity_groups(preds, 0.5, 0.5)
        assert len(groups) == 4 and all(len(g) == 1 for g in groups)

    def test_chain_is_one_group(self):
        # IoU-only: a-b and b-c overlap strongly, a-c far less
        a = pred(1, shifted(0), (0, 1))
        b = pred(2, shifted(1), (0, 1))
        c = pred(3, shifted(2), (0, 1))
        sim_ab = prediction_similarity(a, b, 0.5, use_class_scores=False)
        sim_ac = prediction_similarity(a, c, 0.5, use_class_scores=False)
        tau = (sim_ab + sim_ac) / 2
        assert sim_ac < tau <= sim_ab
        groups = connectivity_groups([a, b, c], tau, 0.5, use_class_scores=False)
        assert len(groups) == 1
        # but the clustering itself cannot keep a and c together
        clusters = cluster_fast([a, b, c], tau, 0.5, use_class_scores=False)
        assert partition(clusters) == {frozenset({(1, 0), (2, 0)}), frozenset({(3, 0)})}

    def test_two_far_pairs(self):
        preds = [
            pred(1, (0, 0, 10, 10), (0.1, 0.9)),
            pred(2, (1, 1, 11, 11), (0.1, 0.9)),
            pred(1, (200, 200, 210, 210), (0.1, 0.9), 1),
            pred(2, (201, 200, 211, 210), (0.1, 0.9), 1),
        ]
        groups = connectivity_groups(preds, 0.5, 0.5)
        assert sorted(len(g) for g in groups) == [2, 2]

    @pytest.mark.parametrize("seed", range(10))
    def test_clusters_nest_in_groups(self, seed):
        rng = np.random.default_rng(seed)
        preds = random_instance(rng, 30, 3)
        groups = [frozenset(p.key for p in g) for g in connectivity_groups(preds, 0.6, 0.3)]
        for c in partition(agglomerative_cluster(preds, 0.6, 0.3)):
            assert sum(c <= g for g in groups) == 1


def test_cluster_rejects_duplicate_detector():
    with pytest.raises(ValueError):
        Cluster((pred(1, shifted(0), (0, 1), 0), pred(1, shifted(1), (0, 1), 1)))


def test_similarity_matrix_same_detector_zero():
    boxes = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], dtype=float)
    scores = np.array([[0.1, 0.9], [0.1, 0.9]])
    m = similarity_matrix(boxes, scores, np.array([1, 1]), 0.5)
    assert np.all(m == 0.0)


def test_similarity_matrix_exactly_symmetric(rng):
    from alfa.clustering import similarity_matrix

    for _ in range(20):
        preds = random_instance(rng, 40, 3)
        boxes = np.array([p.box.as_tuple() for p in preds])
        scores = np.array([p.scores.values for p in preds])
        ids = np.array([p.detector_id for p in preds])
        sim = similarity_matrix(boxes, scores, ids, 0.4)
        assert np.array_equal(sim, sim.T)
        assert np.all(np.diag(sim) == 0.0)
