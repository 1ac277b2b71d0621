import itertools

import pytest

from channelrank.core import (
    ChannelId,
    ChannelList,
    TruncationConfig,
    merge_pool,
    read_channel_lists,
    truncate,
    write_channel_lists,
)

C0 = ChannelId(0, "lexical")
C1 = ChannelId(1, "semantic")
C2 = ChannelId(2, "trending")


def cl(channel, pairs, query="q1"):
    return ChannelList.from_pairs(channel, query, pairs)


class TestChannelList:
    def test_from_pairs_sorts_desc_with_item_tiebreak(self):
        lst = cl(C0, [("B", 0.5), ("A", 0.9), ("D", 0.5), ("C", 0.1)])
        assert lst.items == ("A", "B", "D", "C")

    def test_rejects_duplicate_items(self):
        with pytest.raises(ValueError, match="duplicate"):
            cl(C0, [("A", 0.9), ("A", 0.5)])

    def test_rejects_non_finite_scores(self):
        with pytest.raises(ValueError, match="non-finite"):
            cl(C0, [("A", float("nan"))])
        with pytest.raises(ValueError, match="non-finite"):
            cl(C0, [("A", float("inf"))])

    def test_rejects_unsorted_entries(self):
        with pytest.raises(ValueError, match="sorted"):
            ChannelList(channel=C0, query="q1", entries=(("A", 0.1), ("B", 0.9)))


class TestTruncate:
    def test_prefix_of_sorted_list(self):
        lst = cl(C0, [("A", 0.9), ("B", 0.5), ("C", 0.1)])
        assert truncate(lst, 2).entries == (("A", 0.9), ("B", 0.5))

    def test_n_exceeding_length_returns_all(self):
        lst = cl(C0, [("A", 0.9)])
        assert truncate(lst, 5).entries == (("A", 0.9),)

    def test_empty_input(self):
        lst = cl(C0, [])
        assert truncate(lst, 3).entries == ()


class TestMergePool:
    def test_single_channel_identity(self):
        lst = cl(C0, [("A", 0.9), ("B", 0.5)])
        pool = merge_pool([lst], TruncationConfig.uniform([C0], 2))
        assert pool.candidates == {"A", "B"}
        (hit_a,) = pool.provenance["A"]
        assert (hit_a.channel, hit_a.rank, hit_a.score) == (C0, 1, 0.9)
        (hit_b,) = pool.provenance["B"]
        assert (hit_b.channel, hit_b.rank, hit_b.score) == (C0, 2, 0.5)

    def test_overlap_union(self):
        l0 = cl(C0, [("A", 0.9), ("B", 0.5)])
        l1 = cl(C1, [("B", 0.8), ("C", 0.2)])
        pool = merge_pool([l0, l1], TruncationConfig.uniform([C0, C1], 2))
        assert pool.candidates == {"A", "B", "C"}
        hits = pool.provenance["B"]
        assert {(h.channel, h.rank) for h in hits} == {(C0, 2), (C1, 1)}

    def test_truncation_then_union(self):
        l0 = cl(C0, [("A", 0.9), ("B", 0.5), ("C", 0.1)])
        l1 = cl(C1, [("C", 0.7)])
        cfg = TruncationConfig(per_channel_n={C0: 1, C1: 1})
        pool = merge_pool([l0, l1], cfg)
        assert pool.candidates == {"A", "C"}

    def test_mixed_queries_rejected(self):
        l0 = cl(C0, [("A", 0.9)], query="q1")
        l1 = cl(C1, [("B", 0.9)], query="q2")
        with pytest.raises(ValueError, match="mixed query"):
            merge_pool([l0, l1], TruncationConfig.uniform([C0, C1], 5))

    def test_duplicate_channel_rejected(self):
        l0 = cl(C0, [("A", 0.9)])
        l1 = cl(C0, [("B", 0.9)])
        with pytest.raises(ValueError, match="duplicate channel"):
            merge_pool([l0, l1], TruncationConfig.uniform([C0], 5))

    def test_pool_size_bound_and_disjoint_equality(self):
        l0 = cl(C0, [("A", 0.9), ("B", 0.5)])
        l1 = cl(C1, [("C", 0.8), ("D", 0.2)])
        cfg = TruncationConfig.uniform([C0, C1], 2)
        pool = merge_pool([l0, l1], cfg)
        assert len(pool) == 4  # disjoint: equality with the sum of mins

        l1_overlap = cl(C1, [("A", 0.8), ("D", 0.2)])
        pool2 = merge_pool([l0, l1_overlap], cfg)
        assert len(pool2) < 4

    def test_order_insensitive_in_channel_argument(self):
        l0 = cl(C0, [("A", 0.9), ("B", 0.5)])
        l1 = cl(C1, [("B", 0.8), ("C", 0.2)])
        l2 = cl(C2, [("A", 0.7)])
        cfg = TruncationConfig.uniform([C0, C1, C2], 2)
        pools = [
            merge_pool(list(perm), cfg)
            for perm in itertools.permutations([l0, l1, l2])
        ]
        first = pools[0]
        for pool in pools[1:]:
            assert pool.candidates == first.candidates
            assert pool.provenance == first.provenance

    def test_provenance_matches_truncated_positions_exactly(self):
        l0 = cl(C0, [("A", 0.9), ("B", 0.5), ("C", 0.4), ("D", 0.3)])
        cfg = TruncationConfig.uniform([C0], 3)
        pool = merge_pool([l0], cfg)
        truncated = truncate(l0, 3)
        for rank, (item, score) in enumerate(truncated.entries, start=1):
            (hit,) = pool.provenance[item]
            assert hit.rank == rank
            assert hit.score == score
        assert "D" not in pool.candidates


class TestChannelListFile:
    def test_round_trip(self, tmp_path):
        lists = [
            cl(C0, [("A", 0.9), ("B", 0.5)], query="red shoes"),
            cl(C1, [("B", 0.8)], query="red shoes"),
            cl(C0, [("C", 0.7)], query="blue hat"),
        ]
        path = tmp_path / "lists.tsv"
        write_channel_lists(str(path), lists)
        loaded = read_channel_lists(str(path), channel_names=["lexical", "semantic"])
        assert set(loaded) == {"red shoes", "blue hat"}
        assert loaded["red shoes"][0].entries == (("A", 0.9), ("B", 0.5))
        assert loaded["red shoes"][1].entries == (("B", 0.8),)

    def test_load_sorts_arbitrary_line_order(self, tmp_path):
        path = tmp_path / "lists.tsv"
        path.write_text("q1\tlexical\tB\t0.5\nq1\tlexical\tA\t0.9\n")
        loaded = read_channel_lists(str(path))
        assert loaded["q1"][0].items == ("A", "B")

    def test_bad_line_rejected(self, tmp_path):
        path = tmp_path / "lists.tsv"
        path.write_text("q1\tlexical\tB\n")
        with pytest.raises(ValueError, match="expected 4"):
            read_channel_lists(str(path))
