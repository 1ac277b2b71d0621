"""Boosted ensemble training and prediction.

The model is an additive ensemble: score(x) = base_score + eta * sum_t
tree_t(x). Each round computes pairwise ranking gradients per query
group, fits one tree to them with second-order gains, and advances the
cumulative scores by the shrunken tree output. Training is deterministic
for a fixed seed and independent of the gradient worker thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..features import FeatureSchema
from ..metrics import GroupedNdcg
from .lambdas import PairIndex
from .tree import Leaf, ObliqueSplit, Tree, _GrowParams, bin_features, grow_tree


class TrainingError(ValueError):
    """Raised when a dataset cannot support ranking training."""


@dataclass(frozen=True, slots=True)
class TrainParams:
    """Training hyperparameters.

    ``ndcg_truncation`` is the k of the NDCG@k that drives the pairwise
    gradients; ``sigma`` scales the pairwise sigmoid; ``max_bins`` caps
    the per-feature threshold candidates.
    """

    num_trees: int = 300
    shrinkage: float = 0.1
    max_depth: int = 6
    min_examples_per_leaf: int = 5
    l2: float = 1.0
    ndcg_truncation: int = 8
    sigma: float = 1.0
    oblique: bool = False
    oblique_projections: int = 20
    oblique_sparsity: float = 0.25
    max_bins: int = 255
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_trees < 1:
            raise ValueError(f"num_trees must be >= 1, got {self.num_trees}")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError(f"shrinkage must be in (0, 1], got {self.shrinkage}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_examples_per_leaf < 1:
            raise ValueError("min_examples_per_leaf must be >= 1")
        if self.l2 < 0.0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")
        if self.ndcg_truncation < 1:
            raise ValueError("ndcg_truncation must be >= 1")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.oblique_projections < 1:
            raise ValueError("oblique_projections must be >= 1")
        if not 0.0 < self.oblique_sparsity <= 1.0:
            raise ValueError("oblique_sparsity must be in (0, 1]")
        if not 1 <= self.max_bins <= 60000:
            raise ValueError("max_bins must be in [1, 60000]")


@dataclass(slots=True)
class _PackedForest:
    """Flat node arrays over all trees for vectorized axis-only scoring."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    missing_left: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    max_depth: int

    _CHUNK = 8192

    def scores(self, X: np.ndarray) -> np.ndarray:
        n = len(X)
        out = np.empty(n, dtype=np.float64)
        for lo in range(0, n, self._CHUNK):
            hi = min(lo + self._CHUNK, n)
            out[lo:hi] = self._block(X[lo:hi])
        return out

    def _block(self, X: np.ndarray) -> np.ndarray:
        n = len(X)
        cur = np.broadcast_to(self.roots, (n, len(self.roots))).copy()
        rows = np.arange(n)[:, None]
        for _ in range(self.max_depth):
            f = self.feature[cur]
            at_leaf = f < 0
            if at_leaf.all():
                break
            x = X[rows, np.where(at_leaf, 0, f)]
            go_left = np.where(np.isnan(x), self.missing_left[cur], x < self.threshold[cur])
            nxt = np.where(go_left, self.left[cur], self.right[cur])
            cur = np.where(at_leaf, cur, nxt)
        return self.value[cur].sum(axis=1)


def _pack_trees(trees: tuple[Tree, ...]) -> _PackedForest | None:
    """Flatten axis-only trees; returns None when any oblique node exists."""
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    missing_left: list[bool] = []
    value: list[float] = []
    roots: list[int] = []
    max_depth = 1

    def add(node, depth: int) -> int | None:
        nonlocal max_depth
        max_depth = max(max_depth, depth + 1)
        idx = len(feature)
        if isinstance(node, Leaf):
            feature.append(-1)
            threshold.append(0.0)
            left.append(idx)
            right.append(idx)
            missing_left.append(True)
            value.append(node.value)
            return idx
        if isinstance(node, ObliqueSplit):
            return None
        feature.append(node.feature)
        threshold.append(node.threshold)
        missing_left.append(node.missing_left)
        value.append(0.0)
        left.append(-1)
        right.append(-1)
        li = add(node.left, depth + 1)
        if li is None:
            return None
        ri = add(node.right, depth + 1)
        if ri is None:
            return None
        left[idx] = li
        right[idx] = ri
        return idx

    for tree in trees:
        root = add(tree.root, 0)
        if root is None:
            return None
        roots.append(root)
    return _PackedForest(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        missing_left=np.array(missing_left, dtype=bool),
        value=np.array(value, dtype=np.float64),
        roots=np.array(roots, dtype=np.int64),
        max_depth=max_depth,
    )


@dataclass(slots=True)
class Model:
    """Trained ensemble plus everything needed to score a feature vector."""

    trees: tuple[Tree, ...]
    shrinkage: float
    base_score: float
    schema: FeatureSchema
    params: TrainParams
    format_version: int = 1
    _packed: _PackedForest | None = field(default=None, repr=False, compare=False)
    _packable: bool = field(default=True, repr=False, compare=False)

    def _ensure_packed(self) -> _PackedForest | None:
        if self._packed is None and self._packable:
            self._packed = _pack_trees(self.trees)
            if self._packed is None:
                self._packable = False
        return self._packed

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        """Scores for a feature matrix aligned to the model schema."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise ValueError(
                f"feature matrix must be (n, {len(self.schema)}), got {X.shape}"
            )
        packed = self._ensure_packed()
        if packed is not None:
            raw = packed.scores(X)
        else:
            raw = np.zeros(len(X), dtype=np.float64)
            for tree in self.trees:
                raw += tree.predict_matrix(X)
        return self.base_score + self.shrinkage * raw

    def predict(self, features: np.ndarray) -> float:
        """Score one feature vector (missing cells as NaN)."""
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (len(self.schema),):
            raise ValueError(
                f"feature vector must have length {len(self.schema)}, got {features.shape}"
            )
        return float(self.predict_matrix(features[None, :])[0])


@dataclass(frozen=True, slots=True)
class RoundStats:
    round: int
    train_ndcg: float
    valid_ndcg: float | None


@dataclass(slots=True)
class TrainResult:
    model: Model
    history: list[RoundStats]


def _check_groups_contiguous(group_ids: np.ndarray) -> None:
    seen: set = set()
    prev = None
    for gid in group_ids:
        if gid != prev:
            if gid in seen:
                raise TrainingError("group ids must occupy contiguous index ranges")
            seen.add(gid)
            prev = gid


def train(
    X: np.ndarray,
    labels: np.ndarray,
    group_ids: np.ndarray,
    schema: FeatureSchema,
    params: TrainParams,
    valid: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    n_threads: int = 1,
) -> TrainResult:
    """Train a ranking ensemble.

    Parameters
    ----------
    X
        (n, F) float matrix, NaN marking missing cells; column order must
        match ``schema``.
    labels
        Graded relevance per row (normalized labels in [0, 4]).
    group_ids
        Query-group key per row; rows of one group must be contiguous and
        ordered by the desired tie-break (item id ascending).
    valid
        Optional (X_valid, labels_valid, group_ids_valid) evaluated each
        round for the training log.
    n_threads
        Gradient workers; an execution knob, never part of the model.
        Any value yields bit-identical models.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    group_ids = np.asarray(group_ids)
    if len(X) == 0:
        raise TrainingError("empty training set")
    if not (len(X) == len(labels) == len(group_ids)):
        raise TrainingError("X, labels and group_ids must align")
    if X.shape[1] != len(schema):
        raise TrainingError(
            f"feature matrix has {X.shape[1]} columns, schema expects {len(schema)}"
        )
    _check_groups_contiguous(group_ids)

    pairs = PairIndex(labels, group_ids, k=params.ndcg_truncation, sigma=params.sigma)
    if not pairs.has_pairs:
        raise TrainingError("no query group has two distinct labels; nothing to rank")

    binned = bin_features(X, max_bins=params.max_bins)
    grow = _GrowParams(
        max_depth=params.max_depth,
        min_leaf=params.min_examples_per_leaf,
        l2=params.l2,
        oblique=params.oblique,
        oblique_projections=params.oblique_projections,
        oblique_sparsity=params.oblique_sparsity,
        max_bins=params.max_bins,
    )
    train_metric = GroupedNdcg(labels, group_ids, k=params.ndcg_truncation)
    valid_metric = None
    if valid is not None:
        Xv = np.asarray(valid[0], dtype=np.float64)
        valid_metric = GroupedNdcg(valid[1], valid[2], k=params.ndcg_truncation)
        valid_scores = np.zeros(len(Xv), dtype=np.float64)

    scores = np.zeros(len(X), dtype=np.float64)
    trees: list[Tree] = []
    history: list[RoundStats] = []
    for t in range(params.num_trees):
        g, h = pairs.gradients(scores, n_threads=n_threads)
        rng = (
            np.random.default_rng(np.random.SeedSequence([params.seed, t]))
            if params.oblique
            else None
        )
        tree, row_values = grow_tree(binned, X, g, h, grow, rng)
        trees.append(tree)
        scores += params.shrinkage * row_values
        valid_ndcg = None
        if valid_metric is not None:
            valid_scores += params.shrinkage * tree.predict_matrix(Xv)
            valid_ndcg = valid_metric.mean(valid_scores)
        history.append(
            RoundStats(round=t, train_ndcg=train_metric.mean(scores), valid_ndcg=valid_ndcg)
        )

    model = Model(
        trees=tuple(trees),
        shrinkage=params.shrinkage,
        base_score=0.0,
        schema=schema,
        params=params,
    )
    return TrainResult(model=model, history=history)


def write_training_log(history: list[RoundStats], path: str) -> None:
    """One line per round: ``round<TAB>train_ndcg<TAB>valid_ndcg`` (nan if absent)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            valid = rec.valid_ndcg if rec.valid_ndcg is not None else float("nan")
            fh.write(f"{rec.round}\t{rec.train_ndcg:.6f}\t{valid:.6f}\n")
