"""Feature construction for query-item-week ranking instances.

Three feature groups:

* ``item`` -- intrinsic attributes (price, category, age) and behavioral
  aggregates over trailing lookback windows, shared across queries. Never
  missing.
* ``channel`` -- per-channel retrieval score and 1-based rank from the
  candidate pool's provenance; missing (NA) for channels that did not
  retrieve the item.
* ``engagement`` -- per (query, item) weighted, exponentially decayed
  session engagement over the lookback windows. Unlike labels these are
  NOT max-normalized per query, so they stay comparable across queries.

Every temporal feature for an instance at week w is computed strictly
from events of weeks < w.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .core import CandidatePool, ChannelId, ItemId, WeekId
from .labeling import Action, InteractionEvent, LabelWeights

NA = np.nan

VELOCITY_EPS = 1e-6

#: Categorical code reserved for categories unseen at dataset build time.
UNSEEN_CATEGORY = 0


@dataclass(frozen=True, slots=True)
class FeatureColumn:
    name: str
    kind: str  # "numeric" | "categorical"
    group: str  # "item" | "channel" | "engagement"

    def __post_init__(self) -> None:
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"bad kind {self.kind!r}")
        if self.group not in ("item", "channel", "engagement"):
            raise ValueError(f"bad group {self.group!r}")


@dataclass(frozen=True, slots=True)
class FeatureSchema:
    """Ordered feature columns; the order is fixed at dataset build time
    and travels with the trained model."""

    columns: tuple[FeatureColumn, ...]

    def __post_init__(self) -> None:
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names in schema")

    def __len__(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def index_of(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise KeyError(name)

    def group_mask(self, group: str) -> np.ndarray:
        return np.array([c.group == group for c in self.columns], dtype=bool)

    def drop_group(self, group: str) -> FeatureSchema:
        return FeatureSchema(
            columns=tuple(c for c in self.columns if c.group != group)
        )

    def channel_score_column(self, channel: ChannelId) -> str:
        return f"ch_{channel.name}_score"

    def channel_rank_column(self, channel: ChannelId) -> str:
        return f"ch_{channel.name}_rank"

    def to_json(self) -> str:
        return json.dumps(
            {
                "columns": [
                    {"name": c.name, "kind": c.kind, "group": c.group}
                    for c in self.columns
                ]
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> FeatureSchema:
        payload = json.loads(text)
        return cls(
            columns=tuple(
                FeatureColumn(c["name"], c["kind"], c["group"])
                for c in payload["columns"]
            )
        )


@dataclass(frozen=True, slots=True)
class LookbackConfig:
    """Trailing aggregation windows (weeks) and the engagement decay half-life."""

    windows: tuple[int, ...] = (1, 4)
    decay_half_life: float = 2.0

    def __post_init__(self) -> None:
        if not self.windows:
            raise ValueError("at least one lookback window required")
        if any(w < 1 for w in self.windows):
            raise ValueError("windows must be >= 1 week")
        if any(b <= a for a, b in zip(self.windows, self.windows[1:])):
            raise ValueError("windows must be strictly increasing")
        if self.decay_half_life <= 0:
            raise ValueError("decay_half_life must be positive")


def build_schema(
    channels: Sequence[ChannelId], lookback: LookbackConfig
) -> FeatureSchema:
    """The default column layout emitted by the dataset builder."""
    cols: list[FeatureColumn] = [
        FeatureColumn("item_price", "numeric", "item"),
        FeatureColumn("item_category", "categorical", "item"),
        FeatureColumn("item_age_weeks", "numeric", "item"),
    ]
    for window in lookback.windows:
        for stat in ("impressions", "clicks", "atcs", "purchases"):
            cols.append(FeatureColumn(f"item_{stat}_w{window}", "numeric", "item"))
    if len(lookback.windows) >= 2:
        cols.append(FeatureColumn("item_click_velocity", "numeric", "item"))
        cols.append(FeatureColumn("item_purchase_velocity", "numeric", "item"))
    for channel in sorted(channels, key=lambda c: c.index):
        cols.append(FeatureColumn(f"ch_{channel.name}_score", "numeric", "channel"))
        cols.append(FeatureColumn(f"ch_{channel.name}_rank", "numeric", "channel"))
    cols.append(FeatureColumn("ch_hit_count", "numeric", "channel"))
    for window in lookback.windows:
        cols.append(FeatureColumn(f"qi_engagement_w{window}", "numeric", "engagement"))
        for stat in ("clicks", "atcs", "purchases"):
            cols.append(FeatureColumn(f"qi_{stat}_w{window}", "numeric", "engagement"))
    return FeatureSchema(columns=tuple(cols))


@dataclass(frozen=True, slots=True)
class ActionCounts:
    impressions: int = 0
    clicks: int = 0
    atcs: int = 0
    purchases: int = 0


def lookback_aggregates(
    events: Iterable[InteractionEvent],
    as_of: WeekId,
    cfg: LookbackConfig,
) -> dict[int, ActionCounts]:
    """Raw event counts per action over each trailing window ending at as_of - 1.

    Window L covers weeks [as_of - L, as_of - 1]; events at or after
    ``as_of`` never contribute.
    """
    if as_of < 1:
        raise ValueError(f"as_of must be >= 1, got {as_of}")
    tallies = {w: [0, 0, 0, 0] for w in cfg.windows}
    for ev in events:
        if ev.week >= as_of:
            continue
        age = as_of - ev.week  # >= 1
        for window in cfg.windows:
            if age <= window:
                tallies[window][int(ev.action)] += 1
    return {
        w: ActionCounts(
            impressions=t[int(Action.IMPRESSION)],
            clicks=t[int(Action.CLICK)],
            atcs=t[int(Action.ADD_TO_CART)],
            purchases=t[int(Action.PURCHASE)],
        )
        for w, t in tallies.items()
    }


def velocity(
    short_count: float, long_count: float, short_len: float, long_len: float
) -> float:
    """Short-window rate over long-window rate; ~1 steady, >1 accelerating.

    A small epsilon keeps the ratio finite when the long window is empty;
    an empty short window yields exactly 0.
    """
    if short_len <= 0 or long_len <= 0:
        raise ValueError("window lengths must be positive")
    if short_count == 0:
        return 0.0
    return (short_count / short_len) / ((long_count / long_len) + VELOCITY_EPS)


def decay_factor(age_weeks: np.ndarray | float, half_life: float) -> np.ndarray | float:
    """Exponential decay 2**(-age/half_life); halves every half_life weeks."""
    return np.exp2(-np.asarray(age_weeks, dtype=np.float64) / half_life)


def engagement_features(
    events: Sequence[InteractionEvent],
    as_of: WeekId,
    weights: LabelWeights,
    cfg: LookbackConfig,
) -> dict[int, float]:
    """Decayed, weighted session engagement for one (query, item).

    Each session contributes weight(deepest action) * 2**(-age/half_life),
    where age = as_of - session_week. Sessions at or after ``as_of`` are
    excluded; window L keeps sessions with age <= L. No per-query
    normalization is applied.
    """
    by_session: dict[tuple[str, int], Action] = {}
    for ev in events:
        if ev.week >= as_of:
            continue
        key = (ev.session, ev.week)
        prev = by_session.get(key)
        if prev is None or ev.action > prev:
            by_session[key] = ev.action
    w_arr = weights.as_array()
    out = {window: 0.0 for window in cfg.windows}
    for (_, week), action in by_session.items():
        age = as_of - week
        contribution = float(w_arr[int(action)]) * float(
            decay_factor(age, cfg.decay_half_life)
        )
        for window in cfg.windows:
            if age <= window:
                out[window] += contribution
    return out


def assemble_instance(
    schema: FeatureSchema,
    pool: CandidatePool,
    item: ItemId,
    item_values: Mapping[str, float],
    engagement_values: Mapping[str, float] | None = None,
) -> np.ndarray:
    """Build one feature vector aligned to ``schema``.

    Channel score/rank cells come from the pool's provenance; channels
    that did not retrieve the item stay NA. ``item_values`` must cover
    every item-group column (item features are never missing).
    ``engagement_values`` may be None, leaving engagement cells NA (the
    serve-time contract when no engagement map is supplied).
    """
    if item not in pool.candidates:
        raise ValueError(f"item {item!r} not in candidate pool")
    vec = np.full(len(schema), NA, dtype=np.float64)
    for i, col in enumerate(schema.columns):
        if col.group == "item":
            if col.name not in item_values:
                raise ValueError(f"missing item feature {col.name!r}")
            vec[i] = float(item_values[col.name])
        elif col.group == "engagement":
            if engagement_values is not None and col.name in engagement_values:
                vec[i] = float(engagement_values[col.name])
    hits = pool.provenance[item]
    for hit in hits:
        score_col = f"ch_{hit.channel.name}_score"
        rank_col = f"ch_{hit.channel.name}_rank"
        vec[schema.index_of(score_col)] = hit.score
        vec[schema.index_of(rank_col)] = float(hit.rank)
    try:
        vec[schema.index_of("ch_hit_count")] = float(len(hits))
    except KeyError:
        pass
    return vec
