"""Variant evaluation and the four-way ablation harness.

Variants:

* ``WI`` -- weighted interleaving of the raw channel lists (stochastic;
  scored as the mean over a set of evaluation seeds);
* ``UR`` -- learned ranker on heuristic labels, engagement features
  masked out of the schema;
* ``UR+EF`` -- learned ranker on heuristic labels with engagement
  features;
* ``UR+EF+CL`` -- learned ranker on conversion-weighted labels with
  engagement features.

Every variant is scored on the identical held-out test groups against
conversion-weighted labels (the production optimization target), plus a
purchase-only NDCG@k that credits nothing but same-week purchase counts
(linear gain, so raw counts cannot overflow the exponential convention).
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

import dataclasses

from .core import ChannelList, QueryId, truncate
from .dataset import Dataset
from .fusion import InterleaveWeights, weighted_interleave, rrf_fuse
from .gbdt.model import Model, TrainParams, train
from .gbdt.serialize import model_fingerprint
from .metrics import MetricConfig, ndcg_at_k, order_from_scores
from .synthgen import SplitPlan


@dataclass(slots=True)
class EvalGroup:
    """One (query, week) evaluation unit."""

    query: QueryId
    week: int
    items: tuple[str, ...]          # ascending; positions index labels/X
    labels: np.ndarray              # conversion-weighted normalized labels
    purchases: np.ndarray           # same-week purchase session counts
    X: np.ndarray                   # full-schema feature rows
    lists: list[ChannelList]


def build_eval_groups(
    dataset: Dataset,
    channel_lists: Mapping[int, Mapping[QueryId, list[ChannelList]]],
    keys: Iterable[tuple[int, int]],
) -> list[EvalGroup]:
    """Slice the dataset into per-group views for the given keys."""
    wanted = sorted(set(keys))
    key_to_gid = {key: gid for gid, key in enumerate(dataset.group_keys)}
    groups: list[EvalGroup] = []
    sizes = np.diff(np.concatenate((dataset.group_starts, [len(dataset)])))
    for key in wanted:
        if key not in key_to_gid:
            raise ValueError(f"group {key} not materialized in dataset")
        gid = key_to_gid[key]
        lo = int(dataset.group_starts[gid])
        hi = lo + int(sizes[gid])
        q, week = key
        qstr = dataset.query_vocab[q]
        lists = [
            truncate(cl, dataset.truncation.n_for(cl.channel))
            for cl in channel_lists[week][qstr]
        ]
        groups.append(
            EvalGroup(
                query=qstr,
                week=week,
                items=tuple(dataset.item_vocab[i] for i in dataset.item_codes[lo:hi]),
                labels=dataset.labels_conversion[lo:hi],
                purchases=dataset.purchases[lo:hi],
                X=dataset.X[lo:hi],
                lists=lists,
            )
        )
    return groups


def _linear_ndcg(values: np.ndarray, order: np.ndarray, k: int) -> float:
    """NDCG@k with linear gain; 0 when all values are zero."""
    values = np.asarray(values, dtype=np.float64)
    ranks = np.arange(1, len(values) + 1, dtype=np.float64)
    disc = 1.0 / np.log2(ranks + 1.0)
    disc[k:] = 0.0
    dcg = float(values[order] @ disc)
    ideal = np.sort(values)[::-1]
    idcg = float(ideal @ disc)
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


class Ranker:
    """A scoring strategy: emits one or more orderings per group."""

    name = "ranker"

    def orders(self, group: EvalGroup) -> list[np.ndarray]:
        raise NotImplementedError


class ModelRanker(Ranker):
    """Scores with a trained model over a column subset of the full schema."""

    def __init__(self, name: str, model: Model, column_indices: np.ndarray):
        self.name = name
        self.model = model
        self.column_indices = column_indices

    def orders(self, group: EvalGroup) -> list[np.ndarray]:
        scores = self.model.predict_matrix(group.X[:, self.column_indices])
        return [order_from_scores(scores)]


class WIRanker(Ranker):
    """Weighted interleaving averaged over a fixed set of seeds."""

    def __init__(
        self,
        weights: InterleaveWeights | None = None,
        seeds: Sequence[int] = tuple(range(20)),
    ):
        self.name = "WI"
        self.weights = weights
        self.seeds = tuple(seeds)

    def orders(self, group: EvalGroup) -> list[np.ndarray]:
        weights = self.weights
        if weights is None:
            weights = InterleaveWeights.uniform([cl.channel for cl in group.lists])
        pos = {item: i for i, item in enumerate(group.items)}
        out = []
        for seed in self.seeds:
            fused = weighted_interleave(group.lists, weights, seed=seed)
            out.append(np.array([pos[item] for item in fused.items], dtype=np.intp))
        return out


class RRFRanker(Ranker):
    def __init__(self, k_rrf: float = 60.0):
        self.name = "RRF"
        self.k_rrf = k_rrf

    def orders(self, group: EvalGroup) -> list[np.ndarray]:
        fused = rrf_fuse(group.lists, k_rrf=self.k_rrf)
        pos = {item: i for i, item in enumerate(group.items)}
        return [np.array([pos[item] for item in fused.items], dtype=np.intp)]


class OracleRanker(Ranker):
    """Sorts by the true labels; the attainable upper bound."""

    name = "oracle"

    def orders(self, group: EvalGroup) -> list[np.ndarray]:
        return [order_from_scores(group.labels)]


@dataclass(slots=True)
class VariantResult:
    name: str
    mean_ndcg: float
    mean_purchase_ndcg: float
    group_count: int
    quantiles: dict[str, float]
    n_orders: int
    zero_idcg_groups: int
    model_fingerprint: str | None = None

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "mean_ndcg": self.mean_ndcg,
            "mean_purchase_ndcg": self.mean_purchase_ndcg,
            "group_count": self.group_count,
            "quantiles": self.quantiles,
            "n_orders": self.n_orders,
            "zero_idcg_groups": self.zero_idcg_groups,
            "model_fingerprint": self.model_fingerprint,
        }


def evaluate_variant(
    ranker: Ranker,
    groups: Sequence[EvalGroup],
    cfg: MetricConfig = MetricConfig(),
) -> VariantResult:
    """Mean NDCG@k (and purchase-only NDCG@k) over evaluation groups.

    Stochastic rankers contribute the per-group mean over their orderings;
    groups whose labels are all zero score 0 and stay in the mean, with
    the count reported for transparency.
    """
    if not groups:
        raise ValueError("evaluate_variant requires a non-empty eval set")
    per_group = np.empty(len(groups))
    per_group_purchase = np.empty(len(groups))
    zero_idcg = 0
    n_orders = 0
    for gi, group in enumerate(groups):
        orders = ranker.orders(group)
        n_orders = max(n_orders, len(orders))
        vals = [ndcg_at_k(group.labels, order, cfg.k) for order in orders]
        pvals = [_linear_ndcg(group.purchases, order, cfg.k) for order in orders]
        per_group[gi] = float(np.mean(vals))
        per_group_purchase[gi] = float(np.mean(pvals))
        if not group.labels.any():
            zero_idcg += 1
    quantiles = {
        "p25": float(np.quantile(per_group, 0.25)),
        "p50": float(np.quantile(per_group, 0.50)),
        "p75": float(np.quantile(per_group, 0.75)),
    }
    fingerprint = None
    if isinstance(ranker, ModelRanker):
        fingerprint = model_fingerprint(ranker.model)
    return VariantResult(
        name=ranker.name,
        mean_ndcg=float(per_group.mean()),
        mean_purchase_ndcg=float(per_group_purchase.mean()),
        group_count=len(groups),
        quantiles=quantiles,
        n_orders=n_orders,
        zero_idcg_groups=zero_idcg,
        model_fingerprint=fingerprint,
    )


@dataclass(slots=True)
class AblationConfig:
    train_params: TrainParams = field(
        default_factory=lambda: TrainParams(
            num_trees=150, shrinkage=0.15, max_depth=5,
            min_examples_per_leaf=10, l2=1.0, seed=7,
        )
    )
    metric: MetricConfig = field(default_factory=MetricConfig)
    wi_seeds: int = 20
    n_threads: int = 1


@dataclass(slots=True)
class EvalReport:
    """Per-variant scores on the shared eval set plus pairwise deltas."""

    variants: list[VariantResult]
    deltas: dict[str, float]
    metric_k: int
    wi_seeds: int
    dataset_fingerprint: str
    config_hash: str
    train_history: dict[str, list[float]] = field(default_factory=dict)

    def variant(self, name: str) -> VariantResult:
        for v in self.variants:
            if v.name == name:
                return v
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps(
            {
                "metric_k": self.metric_k,
                "wi_seeds": self.wi_seeds,
                "dataset_fingerprint": self.dataset_fingerprint,
                "config_hash": self.config_hash,
                "variants": [v.as_dict() for v in self.variants],
                "deltas": self.deltas,
            },
            indent=2,
        )

    def render_text(self) -> str:
        lines = [
            f"{'variant':<12} {'ndcg@' + str(self.metric_k):>10} "
            f"{'purch-ndcg':>11} {'groups':>7} {'p50':>8}"
        ]
        for v in self.variants:
            lines.append(
                f"{v.name:<12} {v.mean_ndcg:>10.4f} {v.mean_purchase_ndcg:>11.4f} "
                f"{v.group_count:>7d} {v.quantiles['p50']:>8.4f}"
            )
        lines.append("")
        for name, delta in self.deltas.items():
            lines.append(f"{name}: {delta:+.4f}")
        lines.append("")
        lines.append(f"wi_seeds={self.wi_seeds}  dataset={self.dataset_fingerprint[:12]}")
        lines.append(f"config={self.config_hash[:12]}")
        return "\n".join(lines)


def ablation_run(
    dataset: Dataset,
    channel_lists: Mapping[int, Mapping[QueryId, list[ChannelList]]],
    split: SplitPlan,
    cfg: AblationConfig = AblationConfig(),
) -> EvalReport:
    """Train and evaluate the WI / UR / UR+EF / UR+EF+CL ladder.

    All learned variants share the train/valid/test partitions, the
    training seed, and every non-engagement feature column; they differ
    only along the documented axes (engagement columns, label scheme).
    """
    train_mask = dataset.mask_for(split.train)
    valid_mask = dataset.mask_for(split.valid)
    full_idx = np.arange(len(dataset.schema))
    no_eng_mask = ~dataset.schema.group_mask("engagement")
    no_eng_idx = np.flatnonzero(no_eng_mask)
    schema_no_eng = dataset.schema.drop_group("engagement")

    def fit(label_scheme: str, column_idx: np.ndarray, schema) -> tuple[Model, list[float]]:
        labels = dataset.labels(label_scheme)
        result = train(
            dataset.X[train_mask][:, column_idx],
            labels[train_mask],
            dataset.group_ids[train_mask],
            schema,
            cfg.train_params,
            valid=(
                dataset.X[valid_mask][:, column_idx],
                labels[valid_mask],
                dataset.group_ids[valid_mask],
            ),
            n_threads=cfg.n_threads,
        )
        return result.model, [r.train_ndcg for r in result.history]

    model_ur, hist_ur = fit("heuristic", no_eng_idx, schema_no_eng)
    model_ef, hist_ef = fit("heuristic", full_idx, dataset.schema)
    model_cl, hist_cl = fit("conversion", full_idx, dataset.schema)

    groups = build_eval_groups(dataset, channel_lists, split.test)
    rankers = [
        WIRanker(seeds=tuple(range(cfg.wi_seeds))),
        ModelRanker("UR", model_ur, no_eng_idx),
        ModelRanker("UR+EF", model_ef, full_idx),
        ModelRanker("UR+EF+CL", model_cl, full_idx),
    ]
    variants = [evaluate_variant(r, groups, cfg.metric) for r in rankers]
    by_name = {v.name: v for v in variants}
    deltas = {
        "UR-WI": by_name["UR"].mean_ndcg - by_name["WI"].mean_ndcg,
        "UR+EF-UR": by_name["UR+EF"].mean_ndcg - by_name["UR"].mean_ndcg,
        "UR+EF+CL-UR+EF": by_name["UR+EF+CL"].mean_ndcg - by_name["UR+EF"].mean_ndcg,
        "UR+EF+CL-WI": by_name["UR+EF+CL"].mean_ndcg - by_name["WI"].mean_ndcg,
        "purchase:UR+EF+CL-UR+EF": (
            by_name["UR+EF+CL"].mean_purchase_ndcg - by_name["UR+EF"].mean_purchase_ndcg
        ),
    }
    config_hash = hashlib.sha256(
        json.dumps(
            {
                "train_params": dataclasses.asdict(cfg.train_params),
                "metric_k": cfg.metric.k,
                "wi_seeds": cfg.wi_seeds,
            },
            sort_keys=True,
        ).encode()
    ).hexdigest()
    return EvalReport(
        variants=variants,
        deltas=deltas,
        metric_k=cfg.metric.k,
        wi_seeds=cfg.wi_seeds,
        dataset_fingerprint=dataset.fingerprint(),
        config_hash=config_hash,
        train_history={"UR": hist_ur, "UR+EF": hist_ef, "UR+EF+CL": hist_cl},
    )
