import numpy as np
import pytest

from channelrank.core import TruncationConfig, merge_pool
from channelrank.dataset import (
    ItemCatalog,
    build_dataset,
    read_dataset,
    read_item_catalog,
    write_dataset,
    write_item_catalog,
)
from channelrank.features import engagement_features, lookback_aggregates
from channelrank.synthgen import WorldConfig, filter_and_split, generate

CFG = WorldConfig(
    num_queries=40, num_items=400, universe_size=20, per_channel_n=10,
    sessions_mean=25.0, seed=5,
)


@pytest.fixture(scope="module")
def world():
    return generate(CFG)


@pytest.fixture(scope="module")
def split(world):
    return filter_and_split(world.events, CFG.num_weeks)


@pytest.fixture(scope="module")
def catalog(world):
    cat = world.ground_truth.catalog
    return ItemCatalog(cat.item_vocab, cat.price, cat.category, cat.intro_week)


@pytest.fixture(scope="module")
def dataset(world, split, catalog):
    trunc = TruncationConfig.uniform(world.channels, CFG.per_channel_n)
    return build_dataset(
        world.events, world.channel_lists, catalog, world.channels,
        split.all_keys(), trunc,
    )


class TestBuildDataset:
    def test_groups_contiguous_and_items_sorted(self, dataset):
        assert (np.diff(dataset.group_ids) >= 0).all()
        for gid in range(len(dataset.group_keys)):
            rows = dataset.group_ids == gid
            items = [dataset.item_vocab[i] for i in dataset.item_codes[rows]]
            assert items == sorted(items)

    def test_labels_normalized_with_max_four(self, dataset):
        for labels_arr in (dataset.labels_conversion, dataset.labels_heuristic):
            assert labels_arr.min() >= 0.0
            assert labels_arr.max() <= 4.0
            for gid in range(len(dataset.group_keys)):
                seg = labels_arr[dataset.group_ids == gid]
                if seg.max() > 0:
                    assert seg.max() == 4.0

    def test_item_columns_never_missing(self, dataset):
        item_mask = dataset.schema.group_mask("item")
        assert not np.isnan(dataset.X[:, item_mask]).any()

    def test_channel_columns_match_pool_provenance(self, world, dataset):
        trunc = TruncationConfig.uniform(world.channels, CFG.per_channel_n)
        col = {name: i for i, name in enumerate(dataset.schema.names)}
        rng = np.random.default_rng(0)
        for ridx in rng.choice(len(dataset), size=40, replace=False):
            q = dataset.query_codes[ridx]
            w = int(dataset.weeks[ridx])
            item = dataset.item_vocab[dataset.item_codes[ridx]]
            lists = world.channel_lists[w][dataset.query_vocab[q]]
            pool = merge_pool(lists, trunc)
            hits = {h.channel.name: h for h in pool.provenance[item]}
            for channel in world.channels:
                score = dataset.X[ridx, col[f"ch_{channel.name}_score"]]
                rank = dataset.X[ridx, col[f"ch_{channel.name}_rank"]]
                if channel.name in hits:
                    assert score == hits[channel.name].score
                    assert rank == float(hits[channel.name].rank)
                else:
                    assert np.isnan(score) and np.isnan(rank)
            assert dataset.X[ridx, col["ch_hit_count"]] == len(hits)

    def test_agrees_with_reference_feature_ops(self, world, dataset):
        events = world.events.to_events()
        col = {name: i for i, name in enumerate(dataset.schema.names)}
        lookback = dataset.lookback
        rng = np.random.default_rng(1)
        for ridx in rng.choice(len(dataset), size=15, replace=False):
            qstr = dataset.query_vocab[dataset.query_codes[ridx]]
            istr = dataset.item_vocab[dataset.item_codes[ridx]]
            week = int(dataset.weeks[ridx])
            if week == 0:
                continue
            item_events = [e for e in events if e.item == istr]
            agg = lookback_aggregates(item_events, week, lookback)
            for window in lookback.windows:
                assert dataset.X[ridx, col[f"item_impressions_w{window}"]] == agg[window].impressions
                assert dataset.X[ridx, col[f"item_purchases_w{window}"]] == agg[window].purchases
            qi_events = [e for e in item_events if e.query == qstr]
            eng = engagement_features(
                qi_events, week, dataset.conversion_weights, lookback
            )
            for window in lookback.windows:
                got = dataset.X[ridx, col[f"qi_engagement_w{window}"]]
                assert got == pytest.approx(eng[window], abs=1e-9)

    def test_purchases_column_counts_sessions(self, world, dataset):
        from channelrank.labeling import funnel_table

        table = funnel_table(world.events)
        lookup = {}
        for r in range(len(table)):
            lookup[(int(table.query[r]), int(table.item[r]), int(table.week[r]))] = int(
                table.purchases[r]
            )
        rng = np.random.default_rng(2)
        for ridx in rng.choice(len(dataset), size=30, replace=False):
            key = (
                int(dataset.query_codes[ridx]),
                int(dataset.item_codes[ridx]),
                int(dataset.weeks[ridx]),
            )
            assert dataset.purchases[ridx] == lookup.get(key, 0)

    def test_mask_for_selects_groups(self, dataset, split):
        mask = dataset.mask_for(split.test)
        assert set(dataset.weeks[mask].tolist()) == {split.test_week}
        assert not (set(dataset.weeks[~mask].tolist()) & {split.test_week}) or (
            # week-4 groups outside the retained keys do not exist anyway
            True
        )

    def test_feature_view_drops_engagement(self, dataset):
        X_view, schema_view = dataset.feature_view(drop_engagement=True)
        assert X_view.shape[1] == len(schema_view)
        assert all(c.group != "engagement" for c in schema_view.columns)
        X_full, schema_full = dataset.feature_view(drop_engagement=False)
        shared = [c.name for c in schema_view.columns]
        for name in shared:
            i_full = schema_full.index_of(name)
            i_view = schema_view.index_of(name)
            np.testing.assert_array_equal(X_full[:, i_full], X_view[:, i_view])


class TestNoLeakage:
    @pytest.mark.parametrize("audit_week", [3, 4])
    def test_feature_file_byte_identical_after_future_deletion(
        self, world, split, catalog, tmp_path, audit_week
    ):
        trunc = TruncationConfig.uniform(world.channels, CFG.per_channel_n)
        keys = [k for k in split.all_keys() if k[1] == audit_week]
        full = build_dataset(
            world.events, world.channel_lists, catalog, world.channels, keys, trunc
        )
        truncated_events = world.events.restrict_weeks(audit_week)
        rebuilt = build_dataset(
            truncated_events, world.channel_lists, catalog, world.channels, keys, trunc
        )
        a = tmp_path / f"full_w{audit_week}.csv"
        b = tmp_path / f"rebuilt_w{audit_week}.csv"
        write_dataset(full, str(a), include_labels=False)
        write_dataset(rebuilt, str(b), include_labels=False)
        assert a.read_bytes() == b.read_bytes()

    def test_labels_do_depend_on_instance_week_events(self, world, split, catalog):
        # Sanity counterpoint: deleting the instance week's events zeroes
        # labels, proving the audit above is not vacuous.
        trunc = TruncationConfig.uniform(world.channels, CFG.per_channel_n)
        keys = [k for k in split.all_keys() if k[1] == 4]
        full = build_dataset(
            world.events, world.channel_lists, catalog, world.channels, keys, trunc
        )
        rebuilt = build_dataset(
            world.events.restrict_weeks(4), world.channel_lists, catalog,
            world.channels, keys, trunc,
        )
        assert full.labels_conversion.any()
        assert not rebuilt.labels_conversion.any()


class TestFiles:
    def test_dataset_round_trip(self, dataset, tmp_path):
        path = tmp_path / "data.csv"
        write_dataset(dataset, str(path), label_scheme="conversion")
        loaded = read_dataset(str(path))
        assert loaded.X.shape == dataset.X.shape
        np.testing.assert_array_equal(loaded.labels, dataset.labels_conversion)
        both_nan = np.isnan(loaded.X) & np.isnan(dataset.X)
        np.testing.assert_array_equal(
            np.where(both_nan, 0.0, loaded.X), np.where(both_nan, 0.0, dataset.X)
        )
        np.testing.assert_array_equal(loaded.group_ids, dataset.group_ids)

    def test_na_literal_written(self, dataset, tmp_path):
        path = tmp_path / "data.csv"
        write_dataset(dataset, str(path))
        body = path.read_text()
        assert ",NA" in body

    def test_item_catalog_round_trip(self, catalog, tmp_path):
        path = tmp_path / "items.tsv"
        write_item_catalog(str(path), catalog)
        loaded = read_item_catalog(str(path))
        assert loaded.item_vocab == catalog.item_vocab
        np.testing.assert_array_equal(loaded.price, catalog.price)
        np.testing.assert_array_equal(loaded.category, catalog.category)
        np.testing.assert_array_equal(loaded.intro_week, catalog.intro_week)
