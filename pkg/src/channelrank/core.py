"""Domain types shared across the toolkit, plus candidate-pool construction.

A query is served by K independent retrieval channels, each producing a
scored, ranked item list. Downstream stages see only the union of the
per-channel top-n truncations; this module owns that merge and the
provenance bookkeeping (which channel retrieved an item, at what rank,
with what score) that both the fusion baselines and the learned ranker
consume.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

QueryId = str
ItemId = str
WeekId = int


@dataclass(frozen=True, slots=True)
class ChannelId:
    """One retrieval channel: a stable index in [0, K) plus a human label."""

    index: int
    name: str

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"channel index must be >= 0, got {self.index}")
        if not self.name:
            raise ValueError("channel name must be non-empty")


@dataclass(frozen=True, slots=True)
class ChannelList:
    """A single channel's ranked output for one query.

    Entries are (item, score) pairs sorted by score descending with ties
    broken by item id ascending; duplicates and non-finite scores are
    rejected. Use :meth:`from_pairs` to build from unordered input.
    """

    channel: ChannelId
    query: QueryId
    entries: tuple[tuple[ItemId, float], ...]

    def __post_init__(self) -> None:
        if not self.query:
            raise ValueError("query id must be non-empty")
        seen: set[ItemId] = set()
        prev: tuple[float, ItemId] | None = None
        for item, score in self.entries:
            if not item:
                raise ValueError("item id must be non-empty")
            if not math.isfinite(score):
                raise ValueError(f"non-finite score {score!r} for item {item!r}")
            if item in seen:
                raise ValueError(f"duplicate item {item!r} in channel list")
            seen.add(item)
            key = (-score, item)
            if prev is not None and key < prev:
                raise ValueError(
                    "entries must be sorted by score desc, ties by item id asc"
                )
            prev = key

    @classmethod
    def from_pairs(
        cls,
        channel: ChannelId,
        query: QueryId,
        pairs: Iterable[tuple[ItemId, float]],
    ) -> ChannelList:
        """Build a list from unordered (item, score) pairs, sorting on entry."""
        ordered = sorted(pairs, key=lambda e: (-e[1], e[0]))
        return cls(channel=channel, query=query, entries=tuple(ordered))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def items(self) -> tuple[ItemId, ...]:
        return tuple(item for item, _ in self.entries)


@dataclass(frozen=True, slots=True)
class ChannelHit:
    """Provenance record: where one channel placed an item (rank is 1-based)."""

    channel: ChannelId
    rank: int
    score: float


@dataclass(frozen=True, slots=True)
class CandidatePool:
    """Deduplicated union of truncated channel lists for one query."""

    query: QueryId
    candidates: frozenset[ItemId]
    provenance: Mapping[ItemId, tuple[ChannelHit, ...]]

    def channels_for(self, item: ItemId) -> tuple[ChannelId, ...]:
        return tuple(hit.channel for hit in self.provenance[item])

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True, slots=True)
class TruncationConfig:
    """Per-channel candidate budget: how many top items each channel forwards."""

    per_channel_n: Mapping[ChannelId, int]

    def __post_init__(self) -> None:
        for channel, n in self.per_channel_n.items():
            if n < 1:
                raise ValueError(f"n for channel {channel.name!r} must be >= 1, got {n}")

    @classmethod
    def uniform(cls, channels: Iterable[ChannelId], n: int) -> TruncationConfig:
        return cls(per_channel_n={c: n for c in channels})

    def n_for(self, channel: ChannelId) -> int:
        return self.per_channel_n[channel]


def truncate(channel_list: ChannelList, n: int) -> ChannelList:
    """Keep the first min(n, len) entries of a ranked list, order preserved."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n >= len(channel_list.entries):
        return channel_list
    return ChannelList(
        channel=channel_list.channel,
        query=channel_list.query,
        entries=channel_list.entries[:n],
    )


def merge_pool(lists: Sequence[ChannelList], cfg: TruncationConfig) -> CandidatePool:
    """Union the truncated channel lists into a candidate pool with provenance.

    Items retrieved by several channels appear once, carrying one
    provenance hit per retrieving channel. Provenance hits are ordered by
    channel index so the result is independent of input list order.

    Raises
    ------
    ValueError
        If the lists mix query ids or repeat a channel.
    """
    if not lists:
        raise ValueError("merge_pool requires at least one channel list")
    query = lists[0].query
    seen_channels: set[int] = set()
    for cl in lists:
        if cl.query != query:
            raise ValueError(
                f"mixed query ids: {query!r} vs {cl.query!r}"
            )
        if cl.channel.index in seen_channels:
            raise ValueError(f"duplicate channel {cl.channel.name!r}")
        seen_channels.add(cl.channel.index)

    hits: dict[ItemId, list[ChannelHit]] = {}
    for cl in sorted(lists, key=lambda c: c.channel.index):
        truncated = truncate(cl, cfg.n_for(cl.channel))
        for rank, (item, score) in enumerate(truncated.entries, start=1):
            hits.setdefault(item, []).append(
                ChannelHit(channel=cl.channel, rank=rank, score=score)
            )
    provenance = {item: tuple(entry) for item, entry in hits.items()}
    return CandidatePool(
        query=query,
        candidates=frozenset(provenance),
        provenance=provenance,
    )


def write_channel_lists(path: str, lists: Iterable[ChannelList]) -> None:
    """Write lists in the tab-separated interchange format.

    One line per entry: ``query_id<TAB>channel_name<TAB>item_id<TAB>score``.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for cl in lists:
            for item, score in cl.entries:
                fh.write(f"{cl.query}\t{cl.channel.name}\t{item}\t{score!r}\n")


def read_channel_lists(
    path: str,
    channel_names: Sequence[str] | None = None,
) -> dict[QueryId, list[ChannelList]]:
    """Load channel lists from the tab-separated interchange format.

    Lines may arrive in any order; entries are sorted on load. Channel
    indices follow ``channel_names`` when given, otherwise the sorted
    distinct names in the file (stable under line reordering).
    """
    raw: dict[tuple[QueryId, str], list[tuple[ItemId, float]]] = {}
    names_seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            query, channel_name, item, score_text = parts
            try:
                score = float(score_text)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad score {score_text!r}") from exc
            names_seen.add(channel_name)
            raw.setdefault((query, channel_name), []).append((item, score))

    if channel_names is None:
        channel_names = sorted(names_seen)
    else:
        unknown = names_seen - set(channel_names)
        if unknown:
            raise ValueError(f"{path}: unregistered channel names {sorted(unknown)}")
    channels = {name: ChannelId(index=i, name=name) for i, name in enumerate(channel_names)}

    out: dict[QueryId, list[ChannelList]] = {}
    for (query, channel_name), pairs in raw.items():
        cl = ChannelList.from_pairs(channels[channel_name], query, pairs)
        out.setdefault(query, []).append(cl)
    for query in out:
        out[query].sort(key=lambda c: c.channel.index)
    return out
