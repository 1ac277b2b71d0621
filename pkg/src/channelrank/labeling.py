"""Conversion-funnel label construction.

Sessions interact with a (query, item) in a weekly window through the
hierarchy impression -> click -> add-to-cart -> purchase. Each session is
reduced to its deepest action; per (query, item, week) the view-only /
click / add-to-cart / purchase session counts form the funnel summary.
A scalar engagement label is a weighted sum of those counts with weights
calibrated from corpus-level conversion statistics, then max-normalized
per query onto [0, 4].

Two parallel APIs are provided: small, object-level operations over
``InteractionEvent`` lists (the reference semantics), and a vectorized
path over :class:`EventFrame` column arrays used by the dataset pipeline.
The two are cross-checked in the test suite.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .core import ItemId, QueryId, WeekId

WEEK_SECONDS = 7 * 24 * 3600


class Action(enum.IntEnum):
    """Funnel stages, ordered by depth."""

    IMPRESSION = 0
    CLICK = 1
    ADD_TO_CART = 2
    PURCHASE = 3


_ACTION_NAMES = {
    Action.IMPRESSION: "impression",
    Action.CLICK: "click",
    Action.ADD_TO_CART: "atc",
    Action.PURCHASE: "purchase",
}
_ACTION_FROM_NAME = {name: action for action, name in _ACTION_NAMES.items()}


class CalibrationError(ValueError):
    """Raised when corpus statistics cannot support weight calibration."""


@dataclass(frozen=True, slots=True)
class InteractionEvent:
    """One logged user action on a (query, item) within a session."""

    query: QueryId
    item: ItemId
    session: str
    week: WeekId
    action: Action
    timestamp: float

    def __post_init__(self) -> None:
        if self.week < 0:
            raise ValueError(f"week must be >= 0, got {self.week}")
        lo = self.week * WEEK_SECONDS
        if not lo <= self.timestamp < lo + WEEK_SECONDS:
            raise ValueError(
                f"timestamp {self.timestamp} outside week {self.week} bounds"
            )


@dataclass(frozen=True, slots=True)
class FunnelCounts:
    """Per (query, item, week) session counts by deepest action."""

    query: QueryId
    item: ItemId
    week: WeekId
    views: int = 0
    clicks: int = 0
    atcs: int = 0
    purchases: int = 0

    def __post_init__(self) -> None:
        if min(self.views, self.clicks, self.atcs, self.purchases) < 0:
            raise ValueError("funnel counts must be non-negative")

    @property
    def n_sessions(self) -> int:
        return self.views + self.clicks + self.atcs + self.purchases


@dataclass(frozen=True, slots=True)
class CorpusStats:
    """Corpus-level funnel totals over the training weeks.

    Totals use nested ("reached at least this stage") session counts, so
    purchases <= atcs <= clicks whenever the log respects the funnel
    hierarchy, and the calibrated weight chain holds without clamping.
    """

    total_purchases: int
    total_atcs: int
    total_clicks: int

    def __post_init__(self) -> None:
        if min(self.total_purchases, self.total_atcs, self.total_clicks) < 0:
            raise ValueError("corpus totals must be non-negative")

    @classmethod
    def from_funnel_counts(cls, counts: Iterable[FunnelCounts]) -> CorpusStats:
        p = a = c = 0
        for fc in counts:
            p += fc.purchases
            a += fc.atcs + fc.purchases
            c += fc.clicks + fc.atcs + fc.purchases
        return cls(total_purchases=p, total_atcs=a, total_clicks=c)


@dataclass(frozen=True, slots=True)
class LabelWeights:
    """Funnel-stage weights (purchase, atc, click, view), non-increasing."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self) -> None:
        if not (self.a >= self.b >= self.c >= self.d >= 0.0):
            raise ValueError(
                f"weights must satisfy a >= b >= c >= d >= 0, got "
                f"({self.a}, {self.b}, {self.c}, {self.d})"
            )

    def as_array(self) -> np.ndarray:
        # Indexed by Action value: view weight first.
        return np.array([self.d, self.c, self.b, self.a], dtype=np.float64)


#: Fixed graded-relevance weights for the heuristic-label model variant.
HEURISTIC_WEIGHTS = LabelWeights(a=4.0, b=3.0, c=2.0, d=0.0)


def deepest_action(events: Sequence[InteractionEvent]) -> Action:
    """Deepest funnel stage reached by one session on one (query, item)."""
    if not events:
        raise ValueError("deepest_action requires at least one event")
    first = events[0]
    for ev in events:
        if (ev.session, ev.query, ev.item) != (first.session, first.query, first.item):
            raise ValueError("events must share session, query, and item")
    return Action(max(ev.action for ev in events))


def funnel_counts(
    events: Sequence[InteractionEvent],
    query: QueryId | None = None,
    item: ItemId | None = None,
    week: WeekId | None = None,
) -> FunnelCounts:
    """Reduce all events for one (query, item, week) to funnel session counts.

    Each distinct session increments exactly one counter, chosen by its
    deepest action (an impression-only session counts as a view).
    """
    if events:
        first = events[0]
        query, item, week = first.query, first.item, first.week
        for ev in events:
            if (ev.query, ev.item, ev.week) != (query, item, week):
                raise ValueError("events must share query, item, and week")
    elif query is None or item is None or week is None:
        raise ValueError("empty event list requires explicit query/item/week")

    by_session: dict[str, Action] = {}
    for ev in events:
        prev = by_session.get(ev.session)
        if prev is None or ev.action > prev:
            by_session[ev.session] = ev.action
    tally = {action: 0 for action in Action}
    for action in by_session.values():
        tally[action] += 1
    return FunnelCounts(
        query=query,
        item=item,
        week=week,
        views=tally[Action.IMPRESSION],
        clicks=tally[Action.CLICK],
        atcs=tally[Action.ADD_TO_CART],
        purchases=tally[Action.PURCHASE],
    )


def calibrate_weights(stats: CorpusStats) -> LabelWeights:
    """Corpus-calibrated weights: (1, purchases/atcs, purchases/clicks, 0).

    Rarer, higher-value actions get larger weights. If the corpus funnel
    is anomalous (more purchases than add-to-carts), b and then c are
    clamped so the non-increasing chain still holds.
    """
    if stats.total_atcs == 0:
        raise CalibrationError("total_atcs is zero; cannot calibrate b")
    if stats.total_clicks == 0:
        raise CalibrationError("total_clicks is zero; cannot calibrate c")
    b = stats.total_purchases / stats.total_atcs
    c = stats.total_purchases / stats.total_clicks
    b = min(b, 1.0)
    c = min(c, b)
    return LabelWeights(a=1.0, b=b, c=c, d=0.0)


def raw_label(counts: FunnelCounts, weights: LabelWeights) -> float:
    """Weighted engagement aggregate a*P + b*A + c*C + d*V."""
    return (
        weights.a * counts.purchases
        + weights.b * counts.atcs
        + weights.c * counts.clicks
        + weights.d * counts.views
    )


def normalize_labels(raw: Mapping[ItemId, float]) -> dict[ItemId, float]:
    """Per-query max normalization onto [0, 4].

    The argmax maps to exactly 4.0; an all-zero group normalizes to all
    zeros rather than erroring (such groups carry no ranking signal but
    must not crash dataset construction).
    """
    if not raw:
        raise ValueError("normalize_labels requires a non-empty mapping")
    for item, value in raw.items():
        if value < 0:
            raise ValueError(f"negative raw label {value} for item {item!r}")
    peak = max(raw.values())
    if peak == 0.0:
        return {item: 0.0 for item in raw}
    return {item: 4.0 * value / peak for item, value in raw.items()}


# ---------------------------------------------------------------------------
# Bulk columnar path
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class EventFrame:
    """Columnar event log: parallel arrays plus id vocabularies.

    ``query`` and ``item`` hold int32 codes into the vocab tuples;
    ``session`` holds int64 codes unique within the frame. The textual
    session ids are reconstructed as ``s{code}`` when no vocab is kept.
    """

    week: np.ndarray
    session: np.ndarray
    query: np.ndarray
    item: np.ndarray
    action: np.ndarray
    timestamp: np.ndarray
    query_vocab: tuple[str, ...]
    item_vocab: tuple[str, ...]
    session_vocab: tuple[str, ...] | None = None

    def __len__(self) -> int:
        return len(self.week)

    def restrict_weeks(self, max_week_exclusive: int) -> EventFrame:
        """Drop all events at or after the given week."""
        mask = self.week < max_week_exclusive
        return EventFrame(
            week=self.week[mask],
            session=self.session[mask],
            query=self.query[mask],
            item=self.item[mask],
            action=self.action[mask],
            timestamp=self.timestamp[mask],
            query_vocab=self.query_vocab,
            item_vocab=self.item_vocab,
            session_vocab=self.session_vocab,
        )

    def session_name(self, code: int) -> str:
        if self.session_vocab is not None:
            return self.session_vocab[code]
        return f"s{code}"

    def to_events(self) -> list[InteractionEvent]:
        """Materialize as event objects (intended for small frames)."""
        return [
            InteractionEvent(
                query=self.query_vocab[q],
                item=self.item_vocab[i],
                session=self.session_name(s),
                week=int(w),
                action=Action(int(a)),
                timestamp=float(t),
            )
            for q, i, s, w, a, t in zip(
                self.query, self.item, self.session, self.week, self.action,
                self.timestamp,
            )
        ]


@dataclass(slots=True)
class FunnelTable:
    """Vectorized funnel summaries: one row per (query, item, week) group."""

    query: np.ndarray
    item: np.ndarray
    week: np.ndarray
    views: np.ndarray
    clicks: np.ndarray
    atcs: np.ndarray
    purchases: np.ndarray

    def __len__(self) -> int:
        return len(self.week)

    def mask(self, keep: np.ndarray) -> FunnelTable:
        return FunnelTable(
            self.query[keep], self.item[keep], self.week[keep],
            self.views[keep], self.clicks[keep], self.atcs[keep],
            self.purchases[keep],
        )


def funnel_table(frame: EventFrame) -> FunnelTable:
    """Compute per (query, item, week) funnel counts for a whole frame."""
    if len(frame) == 0:
        empty_i = np.empty(0, dtype=np.int64)
        return FunnelTable(*(empty_i.copy() for _ in range(7)))
    n_items = len(frame.item_vocab)
    n_weeks = int(frame.week.max()) + 1
    group_key = (
        frame.query.astype(np.int64) * n_items + frame.item
    ) * n_weeks + frame.week
    session_key = np.stack([group_key, frame.session.astype(np.int64)], axis=1)
    # Deepest action per (group, session).
    uniq, inverse = np.unique(
        session_key.view([("g", np.int64), ("s", np.int64)]).ravel(),
        return_inverse=True,
    )
    deepest = np.zeros(len(uniq), dtype=np.int64)
    np.maximum.at(deepest, inverse, frame.action.astype(np.int64))
    sess_group = uniq["g"]
    group_ids, group_inverse = np.unique(sess_group, return_inverse=True)
    counts = np.bincount(
        group_inverse * 4 + deepest, minlength=len(group_ids) * 4
    ).reshape(len(group_ids), 4)
    week = group_ids % n_weeks
    rest = group_ids // n_weeks
    item = rest % n_items
    query = rest // n_items
    return FunnelTable(
        query=query.astype(np.int64),
        item=item.astype(np.int64),
        week=week.astype(np.int64),
        views=counts[:, 0],
        clicks=counts[:, 1],
        atcs=counts[:, 2],
        purchases=counts[:, 3],
    )


def corpus_stats(table: FunnelTable, train_weeks: Iterable[int]) -> CorpusStats:
    """Nested funnel totals restricted to the training weeks (no leakage)."""
    weeks = np.asarray(sorted(set(int(w) for w in train_weeks)))
    keep = np.isin(table.week, weeks)
    p = int(table.purchases[keep].sum())
    a = p + int(table.atcs[keep].sum())
    c = a + int(table.clicks[keep].sum())
    return CorpusStats(total_purchases=p, total_atcs=a, total_clicks=c)


# ---------------------------------------------------------------------------
# Event log text format
# ---------------------------------------------------------------------------


def write_event_log(path: str, frame: EventFrame) -> None:
    """Write the tab-separated event log.

    One line per event:
    ``timestamp<TAB>week<TAB>session_id<TAB>query_id<TAB>item_id<TAB>action``.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for q, i, s, w, a, t in zip(
            frame.query, frame.item, frame.session, frame.week, frame.action,
            frame.timestamp,
        ):
            fh.write(
                f"{float(t)!r}\t{int(w)}\t{frame.session_name(int(s))}\t"
                f"{frame.query_vocab[q]}\t{frame.item_vocab[i]}\t"
                f"{_ACTION_NAMES[Action(int(a))]}\n"
            )


def read_event_log(path: str) -> EventFrame:
    """Load a tab-separated event log into an :class:`EventFrame`."""
    timestamps: list[float] = []
    weeks: list[int] = []
    sessions: list[str] = []
    queries: list[str] = []
    items: list[str] = []
    actions: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 tab-separated fields")
            t, w, s, q, i, a = parts
            if a not in _ACTION_FROM_NAME:
                raise ValueError(f"{path}:{lineno}: unknown action {a!r}")
            timestamps.append(float(t))
            weeks.append(int(w))
            sessions.append(s)
            queries.append(q)
            items.append(i)
            actions.append(int(_ACTION_FROM_NAME[a]))

    query_vocab, query_codes = np.unique(np.array(queries, dtype=object), return_inverse=True)
    item_vocab, item_codes = np.unique(np.array(items, dtype=object), return_inverse=True)
    session_vocab, session_codes = np.unique(np.array(sessions, dtype=object), return_inverse=True)
    return EventFrame(
        week=np.array(weeks, dtype=np.int64),
        session=session_codes.astype(np.int64),
        query=query_codes.astype(np.int64),
        item=item_codes.astype(np.int64),
        action=np.array(actions, dtype=np.int64),
        timestamp=np.array(timestamps, dtype=np.float64),
        query_vocab=tuple(str(q) for q in query_vocab),
        item_vocab=tuple(str(i) for i in item_vocab),
        session_vocab=tuple(str(s) for s in session_vocab),
    )
