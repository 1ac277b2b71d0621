import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from channelrank.labeling import (
    HEURISTIC_WEIGHTS,
    WEEK_SECONDS,
    Action,
    CalibrationError,
    CorpusStats,
    EventFrame,
    FunnelCounts,
    InteractionEvent,
    LabelWeights,
    calibrate_weights,
    corpus_stats,
    deepest_action,
    funnel_counts,
    funnel_table,
    normalize_labels,
    raw_label,
    read_event_log,
    write_event_log,
)


def ev(session, action, query="q", item="i", week=0, offset=10.0):
    return InteractionEvent(
        query=query,
        item=item,
        session=session,
        week=week,
        action=action,
        timestamp=week * WEEK_SECONDS + offset,
    )


class TestDeepestAction:
    def test_singleton(self):
        assert deepest_action([ev("s1", Action.IMPRESSION)]) == Action.IMPRESSION

    def test_hierarchy_order(self):
        events = [
            ev("s1", Action.IMPRESSION),
            ev("s1", Action.CLICK),
            ev("s1", Action.ADD_TO_CART),
        ]
        assert deepest_action(events) == Action.ADD_TO_CART

    def test_order_independence(self):
        events = [ev("s1", Action.PURCHASE), ev("s1", Action.IMPRESSION)]
        assert deepest_action(events) == Action.PURCHASE

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            deepest_action([])

    def test_mixed_sessions_rejected(self):
        with pytest.raises(ValueError, match="share"):
            deepest_action([ev("s1", Action.CLICK), ev("s2", Action.CLICK)])


class TestFunnelCounts:
    def test_three_sessions(self):
        events = [
            ev("s1", Action.IMPRESSION), ev("s1", Action.CLICK),
            ev("s2", Action.IMPRESSION), ev("s2", Action.CLICK),
            ev("s3", Action.IMPRESSION), ev("s3", Action.CLICK),
            ev("s3", Action.ADD_TO_CART), ev("s3", Action.PURCHASE),
        ]
        fc = funnel_counts(events)
        assert (fc.views, fc.clicks, fc.atcs, fc.purchases) == (0, 2, 0, 1)
        assert fc.n_sessions == 3

    def test_impression_only_session(self):
        fc = funnel_counts([ev("s1", Action.IMPRESSION)])
        assert (fc.views, fc.clicks, fc.atcs, fc.purchases) == (1, 0, 0, 0)

    def test_no_events(self):
        fc = funnel_counts([], query="q", item="i", week=0)
        assert fc.n_sessions == 0


class TestCalibrateWeights:
    def test_direct_substitution(self):
        w = calibrate_weights(CorpusStats(100, 400, 2000))
        assert (w.a, w.b, w.c, w.d) == (1.0, 0.25, 0.05, 0.0)

    def test_zero_purchases(self):
        w = calibrate_weights(CorpusStats(0, 400, 2000))
        assert (w.a, w.b, w.c, w.d) == (1.0, 0.0, 0.0, 0.0)

    def test_anomalous_funnel_clamps_b(self):
        w = calibrate_weights(CorpusStats(500, 400, 2000))
        assert w.b == 1.0
        assert w.a >= w.b >= w.c >= w.d >= 0.0

    def test_zero_denominators_are_named(self):
        with pytest.raises(CalibrationError, match="total_atcs"):
            calibrate_weights(CorpusStats(10, 0, 100))
        with pytest.raises(CalibrationError, match="total_clicks"):
            calibrate_weights(CorpusStats(10, 20, 0))

    @given(
        p=st.integers(min_value=0, max_value=10_000),
        a=st.integers(min_value=1, max_value=10_000),
        c=st.integers(min_value=1, max_value=10_000),
    )
    def test_chain_constraint_always_holds(self, p, a, c):
        w = calibrate_weights(CorpusStats(p, a, c))
        assert w.a >= w.b >= w.c >= w.d >= 0.0


class TestRawLabel:
    def test_direct_substitution(self):
        counts = FunnelCounts("q", "i", 0, views=5, clicks=2, atcs=0, purchases=1)
        w = LabelWeights(1.0, 0.25, 0.05, 0.0)
        assert raw_label(counts, w) == pytest.approx(1.10)

    def test_all_zero(self):
        counts = FunnelCounts("q", "i", 0)
        assert raw_label(counts, HEURISTIC_WEIGHTS) == 0.0

    def test_atc_only(self):
        counts = FunnelCounts("q", "i", 0, atcs=2)
        w = LabelWeights(1.0, 0.25, 0.05, 0.0)
        assert raw_label(counts, w) == pytest.approx(0.50)


class TestNormalizeLabels:
    def test_direct_substitution(self):
        out = normalize_labels({"A": 10.0, "B": 5.0, "C": 0.0})
        assert out == {"A": 4.0, "B": 2.0, "C": 0.0}

    def test_singleton_maps_to_max(self):
        assert normalize_labels({"A": 7.0}) == {"A": 4.0}

    def test_all_zero_guard(self):
        assert normalize_labels({"A": 0.0, "B": 0.0}) == {"A": 0.0, "B": 0.0}

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            normalize_labels({"A": -1.0})

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            normalize_labels({})

    @given(
        raw=st.dictionaries(
            st.text(alphabet="abcdef", min_size=1, max_size=3),
            st.one_of(
                st.just(0.0),
                st.floats(min_value=1e-3, max_value=1e6, allow_nan=False),
            ),
            min_size=1,
            max_size=10,
        )
    )
    def test_range_argmax_and_order_preserved(self, raw):
        out = normalize_labels(raw)
        assert all(0.0 <= v <= 4.0 for v in out.values())
        peak = max(raw.values())
        if peak > 0:
            argmax = {k for k, v in raw.items() if v == peak}
            assert {k for k, v in out.items() if v == 4.0} == argmax
            items = sorted(raw)
            for x in items:
                for y in items:
                    if raw[x] < raw[y]:
                        assert out[x] < out[y]

    def test_weight_scaling_cancels(self):
        counts = {
            "A": FunnelCounts("q", "A", 0, views=3, clicks=2, purchases=1),
            "B": FunnelCounts("q", "B", 0, views=8, clicks=1),
        }
        w1 = LabelWeights(1.0, 0.25, 0.05, 0.0)
        w3 = LabelWeights(3.0, 0.75, 0.15, 0.0)
        out1 = normalize_labels({k: raw_label(v, w1) for k, v in counts.items()})
        out3 = normalize_labels({k: raw_label(v, w3) for k, v in counts.items()})
        for k in counts:
            assert out1[k] == pytest.approx(out3[k], abs=1e-12)


def _frame_from_events(events):
    queries = sorted({e.query for e in events})
    items = sorted({e.item for e in events})
    sessions = sorted({e.session for e in events})
    qidx = {q: i for i, q in enumerate(queries)}
    iidx = {i: j for j, i in enumerate(items)}
    sidx = {s: i for i, s in enumerate(sessions)}
    return EventFrame(
        week=np.array([e.week for e in events], dtype=np.int64),
        session=np.array([sidx[e.session] for e in events], dtype=np.int64),
        query=np.array([qidx[e.query] for e in events], dtype=np.int64),
        item=np.array([iidx[e.item] for e in events], dtype=np.int64),
        action=np.array([int(e.action) for e in events], dtype=np.int64),
        timestamp=np.array([e.timestamp for e in events], dtype=np.float64),
        query_vocab=tuple(queries),
        item_vocab=tuple(items),
        session_vocab=tuple(sessions),
    )


class TestBulkFunnelTable:
    def _random_events(self, seed, n=400):
        rng = np.random.default_rng(seed)
        events = []
        for _ in range(n):
            q = f"q{rng.integers(3)}"
            i = f"i{rng.integers(5)}"
            w = int(rng.integers(3))
            s = f"s{rng.integers(40)}_{q}_{w}"
            action = Action(int(rng.integers(4)))
            events.append(
                InteractionEvent(
                    query=q, item=i, session=s, week=w, action=action,
                    timestamp=w * WEEK_SECONDS + float(rng.uniform(0, 1000)),
                )
            )
        return events

    def test_agrees_with_reference_grouping(self):
        events = self._random_events(23)
        frame = _frame_from_events(events)
        table = funnel_table(frame)

        by_group = {}
        for e in events:
            by_group.setdefault((e.query, e.item, e.week), []).append(e)
        assert len(table) == len(by_group)
        for row in range(len(table)):
            key = (
                frame.query_vocab[table.query[row]],
                frame.item_vocab[table.item[row]],
                int(table.week[row]),
            )
            fc = funnel_counts(by_group[key])
            assert table.views[row] == fc.views
            assert table.clicks[row] == fc.clicks
            assert table.atcs[row] == fc.atcs
            assert table.purchases[row] == fc.purchases

    def test_total_sessions_preserved(self):
        events = self._random_events(29)
        frame = _frame_from_events(events)
        table = funnel_table(frame)
        total = (
            table.views.sum() + table.clicks.sum()
            + table.atcs.sum() + table.purchases.sum()
        )
        distinct = {(e.session, e.query, e.item, e.week) for e in events}
        assert total == len(distinct)

    def test_corpus_stats_nested_and_train_weeks_only(self):
        events = [
            ev("s1", Action.PURCHASE, week=0),
            ev("s2", Action.CLICK, week=0),
            ev("s3", Action.ADD_TO_CART, week=1),
            ev("s4", Action.PURCHASE, week=4),  # outside train weeks
        ]
        frame = _frame_from_events(events)
        stats = corpus_stats(funnel_table(frame), train_weeks=[0, 1, 2])
        assert stats.total_purchases == 1
        assert stats.total_atcs == 2  # purchase session reached atc too
        assert stats.total_clicks == 3


class TestEventLogFile:
    def test_round_trip(self, tmp_path):
        events = [
            ev("s1", Action.IMPRESSION, query="red shoes", item="sku1", week=1),
            ev("s1", Action.CLICK, query="red shoes", item="sku1", week=1),
            ev("s2", Action.PURCHASE, query="blue hat", item="sku2", week=2),
        ]
        frame = _frame_from_events(events)
        path = tmp_path / "events.tsv"
        write_event_log(str(path), frame)
        loaded = read_event_log(str(path))
        assert sorted(loaded.to_events(), key=lambda e: (e.session, e.timestamp)) == sorted(
            events, key=lambda e: (e.session, e.timestamp)
        )

    def test_unknown_action_rejected(self, tmp_path):
        path = tmp_path / "events.tsv"
        path.write_text("0.0\t0\ts1\tq\ti\tview\n")
        with pytest.raises(ValueError, match="unknown action"):
            read_event_log(str(path))


class TestEventValidation:
    def test_timestamp_outside_week_rejected(self):
        with pytest.raises(ValueError, match="outside week"):
            InteractionEvent(
                query="q", item="i", session="s", week=1,
                action=Action.CLICK, timestamp=10.0,
            )
