"""Dataset assembly: events + weekly channel lists -> labeled instances.

One instance per (query, item, week) for every item in the query-week's
merged candidate pool. Labels come from that week's funnel counts
(conversion-weighted and heuristic variants are both materialized);
every temporal feature is computed strictly from weeks before the
instance week. Rows are ordered by (query, week) group, items ascending
within a group, which downstream code relies on for deterministic
tie-breaking.
"""

from __future__ import annotations

import hashlib
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .core import (
    ChannelId,
    ChannelList,
    QueryId,
    TruncationConfig,
    merge_pool,
)
from .features import (
    FeatureSchema,
    LookbackConfig,
    VELOCITY_EPS,
    build_schema,
)
from .labeling import (
    Action,
    EventFrame,
    HEURISTIC_WEIGHTS,
    LabelWeights,
    calibrate_weights,
    corpus_stats,
    funnel_table,
)


@dataclass(slots=True)
class ItemCatalog:
    """Static item attributes used for item-group features."""

    item_vocab: tuple[str, ...]
    price: np.ndarray
    category: np.ndarray
    intro_week: np.ndarray

    def index(self) -> dict[str, int]:
        return {item: i for i, item in enumerate(self.item_vocab)}


def write_item_catalog(path: str, catalog: ItemCatalog) -> None:
    """Tab-separated: ``item_id<TAB>price<TAB>category<TAB>intro_week``."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, item in enumerate(catalog.item_vocab):
            fh.write(
                f"{item}\t{float(catalog.price[i])!r}\t{int(catalog.category[i])}\t"
                f"{int(catalog.intro_week[i])}\n"
            )


def read_item_catalog(path: str) -> ItemCatalog:
    items: list[str] = []
    price: list[float] = []
    category: list[int] = []
    intro: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            items.append(parts[0])
            price.append(float(parts[1]))
            category.append(int(parts[2]))
            intro.append(int(parts[3]))
    return ItemCatalog(
        item_vocab=tuple(items),
        price=np.array(price),
        category=np.array(category, dtype=np.int64),
        intro_week=np.array(intro, dtype=np.int64),
    )


@dataclass(slots=True)
class Dataset:
    """Materialized instance table plus everything evaluation needs."""

    schema: FeatureSchema
    X: np.ndarray
    labels_conversion: np.ndarray
    labels_heuristic: np.ndarray
    purchases: np.ndarray
    query_codes: np.ndarray
    item_codes: np.ndarray
    weeks: np.ndarray
    group_ids: np.ndarray
    group_keys: list[tuple[int, int]]
    group_starts: np.ndarray
    query_vocab: tuple[str, ...]
    item_vocab: tuple[str, ...]
    conversion_weights: LabelWeights
    lookback: LookbackConfig
    channels: tuple[ChannelId, ...]
    truncation: TruncationConfig

    def __len__(self) -> int:
        return len(self.X)

    def mask_for(self, keys: Iterable[tuple[int, int]]) -> np.ndarray:
        """Row mask covering the given (query_code, week) groups."""
        wanted = set(keys)
        group_in = np.array([key in wanted for key in self.group_keys])
        return group_in[self.group_ids]

    def feature_view(self, drop_engagement: bool) -> tuple[np.ndarray, FeatureSchema]:
        if not drop_engagement:
            return self.X, self.schema
        keep = ~self.schema.group_mask("engagement")
        return self.X[:, keep], self.schema.drop_group("engagement")

    def labels(self, scheme: str) -> np.ndarray:
        if scheme == "conversion":
            return self.labels_conversion
        if scheme == "heuristic":
            return self.labels_heuristic
        raise ValueError(f"unknown label scheme {scheme!r}")

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.X.tobytes())
        digest.update(self.labels_conversion.tobytes())
        digest.update(self.labels_heuristic.tobytes())
        digest.update(self.query_codes.tobytes())
        digest.update(self.item_codes.tobytes())
        digest.update(self.weeks.tobytes())
        return digest.hexdigest()


def _recode_items(frame: EventFrame, catalog: ItemCatalog) -> EventFrame:
    """Remap event item codes onto the catalog's code space."""
    if frame.item_vocab == catalog.item_vocab:
        return frame
    index = catalog.index()
    try:
        mapping = np.array([index[item] for item in frame.item_vocab], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"event log references unknown item {exc.args[0]!r}") from exc
    return EventFrame(
        week=frame.week,
        session=frame.session,
        query=frame.query,
        item=mapping[frame.item],
        action=frame.action,
        timestamp=frame.timestamp,
        query_vocab=frame.query_vocab,
        item_vocab=catalog.item_vocab,
        session_vocab=frame.session_vocab,
    )


def build_dataset(
    events: EventFrame,
    channel_lists: Mapping[int, Mapping[QueryId, list[ChannelList]]],
    catalog: ItemCatalog,
    channels: Sequence[ChannelId],
    keys: Iterable[tuple[int, int]],
    truncation: TruncationConfig,
    lookback: LookbackConfig = LookbackConfig(),
    train_weeks: Sequence[int] = (0, 1, 2),
    conversion_weights: LabelWeights | None = None,
) -> Dataset:
    """Materialize labeled instances for the given (query_code, week) groups.

    ``conversion_weights`` defaults to corpus calibration over
    ``train_weeks`` of the event log. Engagement features always use the
    conversion weights, so all model variants share identical features.
    """
    frame = _recode_items(events, catalog)
    keys = sorted(set(keys))
    if not keys:
        raise ValueError("no (query, week) groups to materialize")
    n_items = len(catalog.item_vocab)
    num_weeks = int(max(int(frame.week.max(initial=0)), max(w for _, w in keys))) + 1

    funnel = funnel_table(frame)
    if conversion_weights is None:
        conversion_weights = calibrate_weights(corpus_stats(funnel, train_weeks))
    heuristic_weights = HEURISTIC_WEIGHTS

    # Sorted lookup from (q, i, w) to funnel rows.
    fkey = (funnel.query * n_items + funnel.item) * num_weeks + funnel.week
    fV = funnel.views.astype(np.float64)
    fC = funnel.clicks.astype(np.float64)
    fA = funnel.atcs.astype(np.float64)
    fP = funnel.purchases.astype(np.float64)

    def funnel_lookup(q: int, items: np.ndarray, week: int) -> np.ndarray:
        """Rows (len(items), 4) of V,C,A,P session counts; zeros if absent."""
        out = np.zeros((len(items), 4))
        if week < 0:
            return out
        want = (q * n_items + items) * num_weeks + week
        idx = np.searchsorted(fkey, want)
        ok = idx < len(fkey)
        ok[ok] = fkey[idx[ok]] == want[ok]
        found = idx[ok]
        out[ok, 0] = fV[found]
        out[ok, 1] = fC[found]
        out[ok, 2] = fA[found]
        out[ok, 3] = fP[found]
        return out

    # Dense per-item weekly event counts for item-group aggregates.
    item_week_action = np.zeros((n_items, num_weeks, 4))
    np.add.at(
        item_week_action,
        (frame.item, frame.week, frame.action),
        1.0,
    )
    item_cum = np.cumsum(item_week_action, axis=1)  # inclusive prefix over weeks

    def item_window_counts(items: np.ndarray, week: int, window: int) -> np.ndarray:
        """(len(items), 4) event counts over weeks [week-window, week-1]."""
        hi = week - 1
        lo = week - window - 1
        if hi < 0:
            return np.zeros((len(items), 4))
        upper = item_cum[items, hi, :]
        if lo >= 0:
            return upper - item_cum[items, lo, :]
        return upper

    schema = build_schema(channels, lookback)
    col = {name: i for i, name in enumerate(schema.names)}
    n_cols = len(schema)
    windows = lookback.windows
    max_window = max(windows)
    decay = np.exp2(-np.arange(1, max_window + 1) / lookback.decay_half_life)
    w_conv = conversion_weights

    X_parts: list[np.ndarray] = []
    lab_conv_parts: list[np.ndarray] = []
    lab_heur_parts: list[np.ndarray] = []
    purchases_parts: list[np.ndarray] = []
    qcode_parts: list[np.ndarray] = []
    icode_parts: list[np.ndarray] = []
    week_parts: list[np.ndarray] = []
    group_sizes: list[int] = []
    catalog_index = catalog.index()

    for q, week in keys:
        qstr = frame.query_vocab[q]
        try:
            lists = channel_lists[week][qstr]
        except KeyError as exc:
            raise ValueError(
                f"no channel lists for query {qstr!r} week {week}"
            ) from exc
        pool = merge_pool(lists, truncation)
        item_strs = sorted(pool.candidates)
        items = np.array([catalog_index[i] for i in item_strs], dtype=np.int64)
        m = len(items)
        block = np.full((m, n_cols), np.nan)

        block[:, col["item_price"]] = catalog.price[items]
        block[:, col["item_category"]] = catalog.category[items]
        block[:, col["item_age_weeks"]] = week - catalog.intro_week[items]

        per_window: dict[int, np.ndarray] = {}
        for window in windows:
            counts = item_window_counts(items, week, window)
            per_window[window] = counts
            block[:, col[f"item_impressions_w{window}"]] = counts[:, Action.IMPRESSION]
            block[:, col[f"item_clicks_w{window}"]] = counts[:, Action.CLICK]
            block[:, col[f"item_atcs_w{window}"]] = counts[:, Action.ADD_TO_CART]
            block[:, col[f"item_purchases_w{window}"]] = counts[:, Action.PURCHASE]
        if len(windows) >= 2:
            short, long_ = windows[0], windows[-1]
            for stat, action in (("click", Action.CLICK), ("purchase", Action.PURCHASE)):
                s = per_window[short][:, action]
                l = per_window[long_][:, action]
                rate = (s / short) / ((l / long_) + VELOCITY_EPS)
                block[:, col[f"item_{stat}_velocity"]] = np.where(s == 0, 0.0, rate)

        # Per-lag funnel rows drive engagement features and, at lag 0, labels.
        lag_rows = [funnel_lookup(q, items, week - d) for d in range(1, max_window + 1)]
        for window in windows:
            eng = np.zeros(m)
            clicks = np.zeros(m)
            atcs = np.zeros(m)
            purch = np.zeros(m)
            for d in range(1, min(window, week) + 1):
                rows = lag_rows[d - 1]
                wsum = (
                    w_conv.a * rows[:, 3]
                    + w_conv.b * rows[:, 2]
                    + w_conv.c * rows[:, 1]
                    + w_conv.d * rows[:, 0]
                )
                eng += decay[d - 1] * wsum
                clicks += rows[:, 1] + rows[:, 2] + rows[:, 3]
                atcs += rows[:, 2] + rows[:, 3]
                purch += rows[:, 3]
            block[:, col[f"qi_engagement_w{window}"]] = eng
            block[:, col[f"qi_clicks_w{window}"]] = clicks
            block[:, col[f"qi_atcs_w{window}"]] = atcs
            block[:, col[f"qi_purchases_w{window}"]] = purch

        hit_counts = np.zeros(m)
        item_pos = {item: i for i, item in enumerate(item_strs)}
        for item_str, hits in pool.provenance.items():
            r = item_pos[item_str]
            hit_counts[r] = len(hits)
            for hit in hits:
                block[r, col[f"ch_{hit.channel.name}_score"]] = hit.score
                block[r, col[f"ch_{hit.channel.name}_rank"]] = float(hit.rank)
        block[:, col["ch_hit_count"]] = hit_counts

        now = funnel_lookup(q, items, week)
        raw_conv = (
            w_conv.a * now[:, 3] + w_conv.b * now[:, 2]
            + w_conv.c * now[:, 1] + w_conv.d * now[:, 0]
        )
        raw_heur = (
            heuristic_weights.a * now[:, 3] + heuristic_weights.b * now[:, 2]
            + heuristic_weights.c * now[:, 1] + heuristic_weights.d * now[:, 0]
        )

        def normalize(raw: np.ndarray) -> np.ndarray:
            peak = raw.max() if len(raw) else 0.0
            if peak <= 0.0:
                return np.zeros_like(raw)
            return 4.0 * raw / peak

        X_parts.append(block)
        lab_conv_parts.append(normalize(raw_conv))
        lab_heur_parts.append(normalize(raw_heur))
        purchases_parts.append(now[:, 3])
        qcode_parts.append(np.full(m, q, dtype=np.int64))
        icode_parts.append(items)
        week_parts.append(np.full(m, week, dtype=np.int64))
        group_sizes.append(m)

    group_sizes_arr = np.array(group_sizes, dtype=np.int64)
    group_starts = np.concatenate(([0], np.cumsum(group_sizes_arr)[:-1]))
    return Dataset(
        schema=schema,
        X=np.vstack(X_parts),
        labels_conversion=np.concatenate(lab_conv_parts),
        labels_heuristic=np.concatenate(lab_heur_parts),
        purchases=np.concatenate(purchases_parts),
        query_codes=np.concatenate(qcode_parts),
        item_codes=np.concatenate(icode_parts),
        weeks=np.concatenate(week_parts),
        group_ids=np.repeat(np.arange(len(keys)), group_sizes_arr),
        group_keys=list(keys),
        group_starts=group_starts,
        query_vocab=frame.query_vocab,
        item_vocab=catalog.item_vocab,
        conversion_weights=conversion_weights,
        lookback=lookback,
        channels=tuple(sorted(channels, key=lambda c: c.index)),
        truncation=truncation,
    )


# ---------------------------------------------------------------------------
# Columnar text interchange
# ---------------------------------------------------------------------------


def write_dataset(
    dataset: Dataset,
    path: str,
    label_scheme: str = "conversion",
    include_labels: bool = True,
    schema_path: str | None = None,
) -> None:
    """Write the instance table as CSV with ``NA`` for missing cells.

    Header: ``query_id,item_id,week,label,<feature columns...>`` (the
    label column is omitted when ``include_labels`` is false). A schema
    sidecar (JSON) lands next to the file unless ``schema_path`` is given.
    """
    labels = dataset.labels(label_scheme) if include_labels else None
    with open(path, "w", encoding="utf-8") as fh:
        head = ["query_id", "item_id", "week"]
        if include_labels:
            head.append("label")
        head.extend(dataset.schema.names)
        fh.write(",".join(head) + "\n")
        for r in range(len(dataset)):
            fields = [
                dataset.query_vocab[dataset.query_codes[r]],
                dataset.item_vocab[dataset.item_codes[r]],
                str(int(dataset.weeks[r])),
            ]
            if labels is not None:
                fields.append(repr(float(labels[r])))
            row = dataset.X[r]
            fields.extend(
                "NA" if np.isnan(v) else repr(float(v)) for v in row
            )
            fh.write(",".join(fields) + "\n")
    sidecar = schema_path or path + ".schema.json"
    with open(sidecar, "w", encoding="utf-8") as fh:
        fh.write(dataset.schema.to_json())


@dataclass(slots=True)
class LoadedDataset:
    """Instance table read back from the CSV interchange format."""

    schema: FeatureSchema
    X: np.ndarray
    labels: np.ndarray
    query_ids: list[str]
    item_ids: list[str]
    weeks: np.ndarray
    group_ids: np.ndarray


def read_dataset(path: str, schema_path: str | None = None) -> LoadedDataset:
    sidecar = schema_path or path + ".schema.json"
    with open(sidecar, encoding="utf-8") as fh:
        schema = FeatureSchema.from_json(fh.read())
    query_ids: list[str] = []
    item_ids: list[str] = []
    weeks: list[int] = []
    labels: list[float] = []
    rows: list[np.ndarray] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        expected = ["query_id", "item_id", "week", "label", *schema.names]
        if header != expected:
            raise ValueError(f"{path}: header does not match schema sidecar")
        n_cols = len(schema)
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4 + n_cols:
                raise ValueError(f"{path}:{lineno}: wrong field count")
            query_ids.append(parts[0])
            item_ids.append(parts[1])
            weeks.append(int(parts[2]))
            labels.append(float(parts[3]))
            rows.append(
                np.array(
                    [np.nan if v == "NA" else float(v) for v in parts[4:]],
                    dtype=np.float64,
                )
            )
    if not rows:
        raise ValueError(f"{path}: no instances")
    keys = list(zip(query_ids, weeks))
    group_ids = np.zeros(len(keys), dtype=np.int64)
    gid = 0
    for i in range(1, len(keys)):
        if keys[i] != keys[i - 1]:
            gid += 1
        group_ids[i] = gid
    return LoadedDataset(
        schema=schema,
        X=np.vstack(rows),
        labels=np.array(labels),
        query_ids=query_ids,
        item_ids=item_ids,
        weeks=np.array(weeks, dtype=np.int64),
        group_ids=group_ids,
    )
