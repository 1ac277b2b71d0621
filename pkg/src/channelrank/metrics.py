"""Ranking quality metrics: truncated DCG / NDCG.

Gain convention: 2**label - 1 with graded labels in [0, 4]; discount
1 / log2(rank + 1) with 1-based ranks. A group whose ideal DCG is zero
(all labels zero) scores 0 by convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, slots=True)
class MetricConfig:
    """Evaluation metric settings; k is the truncation depth."""

    k: int = 8

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


def gain(labels: np.ndarray) -> np.ndarray:
    """Exponential gain 2**label - 1."""
    return np.exp2(np.asarray(labels, dtype=np.float64)) - 1.0


def discounts(n: int, k: int) -> np.ndarray:
    """Per-position discounts 1/log2(rank+1), zero beyond rank k."""
    ranks = np.arange(1, n + 1, dtype=np.float64)
    d = 1.0 / np.log2(ranks + 1.0)
    d[k:] = 0.0
    return d


def dcg_at_k(ordered_labels: np.ndarray, k: int) -> float:
    """DCG of labels already arranged in ranked order."""
    ordered_labels = np.asarray(ordered_labels, dtype=np.float64)
    return float(gain(ordered_labels) @ discounts(len(ordered_labels), k))


def ideal_dcg_at_k(labels: np.ndarray, k: int) -> float:
    """DCG of the label-descending arrangement (the normalizer)."""
    ordered = np.sort(np.asarray(labels, dtype=np.float64))[::-1]
    return dcg_at_k(ordered, k)


def ndcg_at_k(labels: np.ndarray, predicted_order: np.ndarray, k: int) -> float:
    """NDCG@k of a predicted ordering.

    Parameters
    ----------
    labels
        Non-negative relevance per item, indexed by item position.
    predicted_order
        Permutation of ``range(len(labels))``: item indices from best to
        worst under the ranker.
    k
        Truncation depth.
    """
    labels = np.asarray(labels, dtype=np.float64)
    order = np.asarray(predicted_order, dtype=np.intp)
    if labels.ndim != 1 or order.shape != labels.shape:
        raise ValueError("labels and predicted_order must be 1-d and same length")
    if np.any(labels < 0):
        raise ValueError("labels must be non-negative")
    check = np.zeros(len(labels), dtype=bool)
    check[order] = True
    if not check.all():
        raise ValueError("predicted_order is not a permutation")
    idcg = ideal_dcg_at_k(labels, k)
    if idcg == 0.0:
        return 0.0
    return dcg_at_k(labels[order], k) / idcg


def order_from_scores(scores: np.ndarray, tiebreak: np.ndarray | None = None) -> np.ndarray:
    """Ranking induced by scores (descending); ties break by ``tiebreak`` ascending.

    ``tiebreak`` defaults to the item index, which keeps evaluation
    deterministic when the ranker emits equal scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if tiebreak is None:
        tiebreak = np.arange(len(scores))
    return np.lexsort((np.asarray(tiebreak), -scores))


def ndcg_from_scores(
    labels: np.ndarray,
    scores: np.ndarray,
    k: int,
    tiebreak: np.ndarray | None = None,
) -> float:
    return ndcg_at_k(labels, order_from_scores(scores, tiebreak), k)


class GroupedNdcg:
    """Vectorized mean NDCG@k over many contiguous query groups.

    Built once per dataset (labels and grouping are fixed), then evaluated
    for any score vector; used to log per-round training quality without a
    per-group Python loop.
    """

    def __init__(self, labels: np.ndarray, group_ids: np.ndarray, k: int):
        labels = np.asarray(labels, dtype=np.float64)
        group_ids = np.asarray(group_ids)
        if labels.shape != group_ids.shape:
            raise ValueError("labels and group_ids must have the same shape")
        # Groups must be contiguous runs; remap to dense 0..G-1 codes.
        change = np.flatnonzero(np.diff(group_ids) != 0)
        starts = np.concatenate(([0], change + 1))
        self.n = len(labels)
        self.k = int(k)
        self.group_starts = starts
        self.group_count = len(starts)
        self.group_codes = np.repeat(
            np.arange(self.group_count), np.diff(np.concatenate((starts, [self.n])))
        )
        self.gains = gain(labels)
        self._rank_offsets = starts  # position of each group's first row
        # Ideal DCG per group, computed once.
        order = np.lexsort((-labels, self.group_codes))
        pos_in_group = np.arange(self.n) - starts[self.group_codes[order]]
        disc = np.where(
            pos_in_group < self.k, 1.0 / np.log2(pos_in_group + 2.0), 0.0
        )
        self.idcg = np.bincount(
            self.group_codes[order], weights=self.gains[order] * disc,
            minlength=self.group_count,
        )
        self._nonzero = self.idcg > 0.0

    def mean(self, scores: np.ndarray, tiebreak: np.ndarray | None = None) -> float:
        """Mean NDCG@k across groups for the given scores (zero-IDCG groups score 0)."""
        return float(np.mean(self.per_group(scores, tiebreak)))

    def per_group(
        self, scores: np.ndarray, tiebreak: np.ndarray | None = None
    ) -> np.ndarray:
        scores = np.asarray(scores, dtype=np.float64)
        if tiebreak is None:
            tiebreak = np.arange(self.n)
        order = np.lexsort((np.asarray(tiebreak), -scores, self.group_codes))
        pos_in_group = np.arange(self.n) - self.group_starts[self.group_codes[order]]
        disc = np.where(
            pos_in_group < self.k, 1.0 / np.log2(pos_in_group + 2.0), 0.0
        )
        dcg = np.bincount(
            self.group_codes[order], weights=self.gains[order] * disc,
            minlength=self.group_count,
        )
        out = np.zeros(self.group_count)
        np.divide(dcg, self.idcg, out=out, where=self._nonzero)
        return out
