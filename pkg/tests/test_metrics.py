import math

import numpy as np
import pytest

from channelrank.metrics import (
    GroupedNdcg,
    MetricConfig,
    dcg_at_k,
    ideal_dcg_at_k,
    ndcg_at_k,
    ndcg_from_scores,
    order_from_scores,
)


def brute_force_ndcg(labels, order, k):
    """Position-by-position loop, independent of the vectorized path."""
    dcg = 0.0
    for pos, idx in enumerate(order[:k], start=1):
        dcg += (2.0 ** labels[idx] - 1.0) / math.log2(pos + 1)
    ideal = sorted(labels, reverse=True)
    idcg = 0.0
    for pos, lab in enumerate(ideal[:k], start=1):
        idcg += (2.0 ** lab - 1.0) / math.log2(pos + 1)
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


class TestNdcg:
    def test_ideal_ordering_is_one(self):
        labels = np.array([3.0, 1.0, 0.0])
        assert ndcg_at_k(labels, np.array([0, 1, 2]), k=3) == pytest.approx(1.0)

    def test_hand_computed_reversed_case(self):
        # labels [3,1,0] ranked worst-first: DCG = 0 + 1/log2(3) + 7/2,
        # IDCG = 7 + 1/log2(3).
        labels = np.array([3.0, 1.0, 0.0])
        value = ndcg_at_k(labels, np.array([2, 1, 0]), k=3)
        dcg = 1.0 / math.log2(3) + 7.0 / 2.0
        idcg = 7.0 + 1.0 / math.log2(3)
        assert value == pytest.approx(dcg / idcg, abs=1e-12)
        assert value == pytest.approx(0.54134, abs=1e-5)

    def test_all_zero_labels_score_zero(self):
        labels = np.zeros(4)
        assert ndcg_at_k(labels, np.arange(4), k=4) == 0.0

    def test_matches_brute_force_on_random_lists(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            n = int(rng.integers(1, 11))
            labels = rng.uniform(0, 4, size=n)
            order = rng.permutation(n)
            k = int(rng.integers(1, 12))
            assert ndcg_at_k(labels, order, k) == pytest.approx(
                brute_force_ndcg(labels, list(order), k), abs=1e-12
            )

    def test_k_beyond_length_equals_untruncated(self):
        rng = np.random.default_rng(3)
        labels = rng.uniform(0, 4, size=6)
        order = rng.permutation(6)
        assert ndcg_at_k(labels, order, k=6) == pytest.approx(
            ndcg_at_k(labels, order, k=50), abs=1e-12
        )

    def test_invariant_under_monotone_score_transform(self):
        rng = np.random.default_rng(5)
        labels = rng.uniform(0, 4, size=8)
        scores = rng.normal(size=8)
        base = ndcg_from_scores(labels, scores, k=8)
        assert ndcg_from_scores(labels, 3.0 * scores + 7.0, k=8) == base
        assert ndcg_from_scores(labels, np.exp(scores), k=8) == base

    def test_rejects_non_permutation(self):
        with pytest.raises(ValueError, match="permutation"):
            ndcg_at_k(np.array([1.0, 2.0]), np.array([0, 0]), k=2)

    def test_rejects_negative_labels(self):
        with pytest.raises(ValueError, match="non-negative"):
            ndcg_at_k(np.array([-1.0, 2.0]), np.array([0, 1]), k=2)


class TestOrderFromScores:
    def test_ties_break_by_tiebreak_ascending(self):
        scores = np.array([1.0, 1.0, 2.0])
        order = order_from_scores(scores, tiebreak=np.array([5, 2, 9]))
        assert list(order) == [2, 1, 0]


class TestGroupedNdcg:
    def test_matches_scalar_path_per_group(self):
        rng = np.random.default_rng(17)
        sizes = [1, 4, 7, 3, 10]
        labels = np.concatenate([rng.uniform(0, 4, size=s) for s in sizes])
        group_ids = np.repeat(np.arange(len(sizes)), sizes)
        scores = rng.normal(size=len(labels))
        grouped = GroupedNdcg(labels, group_ids, k=8)
        per_group = grouped.per_group(scores)
        start = 0
        for gi, size in enumerate(sizes):
            seg = slice(start, start + size)
            expected = ndcg_from_scores(labels[seg], scores[seg], k=8)
            assert per_group[gi] == pytest.approx(expected, abs=1e-12)
            start += size
        assert grouped.mean(scores) == pytest.approx(per_group.mean(), abs=1e-15)

    def test_zero_idcg_group_scores_zero(self):
        labels = np.array([0.0, 0.0, 3.0, 1.0])
        group_ids = np.array([0, 0, 1, 1])
        grouped = GroupedNdcg(labels, group_ids, k=8)
        per_group = grouped.per_group(np.array([1.0, 0.5, 1.0, 2.0]))
        assert per_group[0] == 0.0
        assert per_group[1] > 0.0


class TestMetricConfig:
    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            MetricConfig(k=0)

    def test_helpers_consistent(self):
        labels = np.array([4.0, 2.0, 0.0])
        assert ideal_dcg_at_k(labels, 3) == pytest.approx(dcg_at_k(labels, 3))
