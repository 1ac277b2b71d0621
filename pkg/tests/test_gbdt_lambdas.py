import math

import numpy as np
import pytest

from channelrank.gbdt.lambdas import PairIndex, delta_ndcg, lambda_gradients
from channelrank.metrics import ndcg_at_k


def brute_force_delta_ndcg(labels, order, i, j, k):
    """Full NDCG@k recompute before and after swapping positions i and j."""
    before = ndcg_at_k(labels, order, k)
    swapped = list(order)
    swapped[i], swapped[j] = swapped[j], swapped[i]
    after = ndcg_at_k(labels, np.array(swapped), k)
    return abs(after - before)


def brute_force_lambdas(labels, scores, k, sigma=1.0):
    """Pair enumeration with full-recompute swap deltas; no quantization."""
    n = len(labels)
    order = list(np.lexsort((np.arange(n), -np.asarray(scores, dtype=np.float64))))
    pos = {doc: p for p, doc in enumerate(order)}
    g = np.zeros(n)
    h = np.zeros(n)
    for i in range(n):
        for j in range(n):
            if labels[i] > labels[j]:
                delta = brute_force_delta_ndcg(labels, np.array(order), pos[i], pos[j], k)
                rho = 1.0 / (1.0 + math.exp(sigma * (scores[i] - scores[j])))
                lam = sigma * delta * rho
                g[i] -= lam
                g[j] += lam
                hess = sigma * sigma * delta * rho * (1.0 - rho)
                h[i] += hess
                h[j] += hess
    return g, h


class TestDeltaNdcg:
    def test_both_positions_beyond_k(self):
        labels = np.linspace(0, 4, 12)
        order = np.arange(12)
        assert delta_ndcg(labels, order, 9, 11, k=8) == 0.0

    def test_equal_labels_zero(self):
        labels = np.array([2.0, 2.0, 1.0])
        order = np.array([0, 1, 2])
        assert delta_ndcg(labels, order, 0, 1, k=8) == 0.0

    def test_hand_case_two_docs(self):
        labels = np.array([4.0, 0.0])
        order = np.array([0, 1])
        expected = brute_force_delta_ndcg(labels, order, 0, 1, k=8)
        assert delta_ndcg(labels, order, 0, 1, k=8) == pytest.approx(expected, abs=1e-12)

    def test_matches_full_recompute_on_random_lists(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            n = int(rng.integers(2, 9))
            labels = rng.choice([0.0, 1.0, 2.0, 3.0, 4.0], size=n)
            order = rng.permutation(n)
            i, j = rng.choice(n, size=2, replace=False)
            k = int(rng.integers(1, 10))
            mine = delta_ndcg(labels, order, int(i), int(j), k)
            oracle = brute_force_delta_ndcg(labels, order, int(i), int(j), k)
            assert mine == pytest.approx(oracle, abs=1e-12)

    def test_invalid_positions_rejected(self):
        with pytest.raises(ValueError):
            delta_ndcg(np.array([1.0, 0.0]), np.array([0, 1]), 0, 0, k=8)


class TestLambdaGradients:
    def test_equal_labels_all_zero(self):
        labels = np.full(5, 2.0)
        g, h = lambda_gradients(labels, np.zeros(5), k=8)
        assert not g.any() and not h.any()

    def test_two_docs_equal_scores_direction(self):
        # Formula convention: the higher-labeled doc accumulates negative
        # gradient, so its Newton step -g/(h+l2) raises its score.
        g, h = lambda_gradients(np.array([4.0, 0.0]), np.zeros(2), k=8)
        assert g[0] < 0.0 < g[1]
        assert g[0] == -g[1]
        assert h[0] > 0 and h[1] > 0
        step_winner = -g[0] / (h[0] + 1.0)
        assert step_winner > 0.0

    def test_gradient_sum_exactly_zero(self):
        rng = np.random.default_rng(41)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            labels = rng.choice([0.0, 1.0, 2.0, 4.0], size=n)
            scores = rng.normal(size=n)
            g, _ = lambda_gradients(labels, scores, k=8)
            assert g.sum() == 0.0

    def test_hessians_non_negative(self):
        rng = np.random.default_rng(43)
        labels = rng.choice([0.0, 2.0, 4.0], size=30)
        g, h = lambda_gradients(labels, rng.normal(size=30), k=8)
        assert (h >= 0).all()

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(47)
        for _ in range(100):
            n = int(rng.integers(2, 9))
            labels = rng.choice([0.0, 1.0, 2.0, 3.0, 4.0], size=n)
            scores = rng.normal(size=n)
            g, h = lambda_gradients(labels, scores, k=8)
            g_oracle, h_oracle = brute_force_lambdas(labels, scores, k=8)
            np.testing.assert_allclose(g, g_oracle, atol=1e-9)
            np.testing.assert_allclose(h, h_oracle, atol=1e-9)

    def test_pairwise_push_direction_any_scores(self):
        # For every discordant pair, the pair's contribution lowers the
        # winner's g and raises the loser's, whatever the current scores.
        rng = np.random.default_rng(53)
        labels = np.array([3.0, 1.0])
        for _ in range(50):
            scores = rng.normal(size=2) * 5
            g, _ = lambda_gradients(labels, scores, k=8)
            assert g[0] <= 0.0 <= g[1]

    def test_score_shift_invariance(self):
        rng = np.random.default_rng(59)
        labels = rng.choice([0.0, 2.0, 4.0], size=12)
        scores = rng.normal(size=12)
        g1, h1 = lambda_gradients(labels, scores, k=8)
        g2, h2 = lambda_gradients(labels, scores + 100.0, k=8)
        np.testing.assert_allclose(g1, g2, atol=1e-9)
        np.testing.assert_allclose(h1, h2, atol=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            lambda_gradients(np.array([]), np.array([]), k=8)


class TestPairIndex:
    def _random_groups(self, seed, n_groups=40):
        rng = np.random.default_rng(seed)
        labels_parts, scores_parts, sizes = [], [], []
        for _ in range(n_groups):
            size = int(rng.integers(1, 12))
            sizes.append(size)
            labels_parts.append(rng.choice([0.0, 1.0, 2.0, 3.0, 4.0], size=size))
            scores_parts.append(rng.normal(size=size))
        labels = np.concatenate(labels_parts)
        scores = np.concatenate(scores_parts)
        group_ids = np.repeat(np.arange(n_groups), sizes)
        return labels, scores, group_ids, sizes

    def test_matches_single_group_function(self):
        labels, scores, group_ids, sizes = self._random_groups(61)
        index = PairIndex(labels, group_ids, k=8)
        g, h = index.gradients(scores)
        start = 0
        for size in sizes:
            seg = slice(start, start + size)
            g_ref, h_ref = lambda_gradients(labels[seg], scores[seg], k=8)
            np.testing.assert_array_equal(g[seg], g_ref)
            np.testing.assert_array_equal(h[seg], h_ref)
            start += size

    def test_thread_count_never_changes_result(self):
        labels, scores, group_ids, _ = self._random_groups(67, n_groups=80)
        index = PairIndex(labels, group_ids, k=8)
        g1, h1 = index.gradients(scores, n_threads=1)
        for n_threads in (2, 3, 8):
            gn, hn = index.gradients(scores, n_threads=n_threads)
            np.testing.assert_array_equal(g1, gn)
            np.testing.assert_array_equal(h1, hn)

    def test_per_group_sum_exactly_zero(self):
        labels, scores, group_ids, sizes = self._random_groups(71)
        index = PairIndex(labels, group_ids, k=8)
        g, _ = index.gradients(scores)
        start = 0
        for size in sizes:
            assert g[start:start + size].sum() == 0.0
            start += size
