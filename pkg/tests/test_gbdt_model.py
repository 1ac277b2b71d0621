import numpy as np
import pytest

from channelrank.features import FeatureColumn, FeatureSchema
from channelrank.gbdt.model import Model, TrainingError, TrainParams, train, write_training_log
from channelrank.gbdt.serialize import serialize_model
from channelrank.gbdt.tree import AxisSplit, Leaf, Tree


def generic_schema(n):
    return FeatureSchema(
        columns=tuple(FeatureColumn(f"f{i}", "numeric", "item") for i in range(n))
    )


def ranking_problem(seed, n_groups=30, group_size=8, n_features=5, noise=0.05):
    """Groups whose labels are a noisy function of the first feature."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_groups * group_size, n_features))
    base = X[:, 0] + noise * rng.normal(size=len(X))
    labels = np.zeros(len(X))
    group_ids = np.repeat(np.arange(n_groups), group_size)
    for g in range(n_groups):
        seg = slice(g * group_size, (g + 1) * group_size)
        ranks = np.argsort(np.argsort(base[seg]))
        labels[seg] = 4.0 * ranks / (group_size - 1)
    return X, labels, group_ids


class TestTrainParams:
    def test_zero_trees_rejected(self):
        with pytest.raises(ValueError, match="num_trees"):
            TrainParams(num_trees=0)

    def test_bad_shrinkage_rejected(self):
        with pytest.raises(ValueError, match="shrinkage"):
            TrainParams(shrinkage=0.0)
        with pytest.raises(ValueError, match="shrinkage"):
            TrainParams(shrinkage=1.5)

    def test_defaults_valid(self):
        params = TrainParams()
        assert params.num_trees == 300
        assert params.ndcg_truncation == 8


class TestTrain:
    def test_learns_to_rank_small_problem(self):
        X, labels, group_ids = ranking_problem(101)
        params = TrainParams(num_trees=60, shrinkage=0.15, max_depth=4,
                             min_examples_per_leaf=2, seed=3)
        result = train(X, labels, group_ids, generic_schema(X.shape[1]), params)
        assert result.history[-1].train_ndcg > 0.97
        assert result.history[-1].train_ndcg > result.history[0].train_ndcg

    def test_exact_tree_count(self):
        X, labels, group_ids = ranking_problem(103, n_groups=5)
        params = TrainParams(num_trees=7, max_depth=3, min_examples_per_leaf=2)
        result = train(X, labels, group_ids, generic_schema(X.shape[1]), params)
        assert len(result.model.trees) == 7
        assert len(result.history) == 7

    def test_empty_dataset_rejected(self):
        with pytest.raises(TrainingError, match="empty"):
            train(
                np.empty((0, 3)), np.empty(0), np.empty(0),
                generic_schema(3), TrainParams(num_trees=1),
            )

    def test_all_equal_labels_rejected(self):
        X = np.random.default_rng(0).normal(size=(20, 3))
        labels = np.full(20, 2.0)
        group_ids = np.repeat([0, 1], 10)
        with pytest.raises(TrainingError, match="distinct"):
            train(X, labels, group_ids, generic_schema(3), TrainParams(num_trees=1))

    def test_non_contiguous_groups_rejected(self):
        X = np.random.default_rng(0).normal(size=(4, 2))
        labels = np.array([0.0, 4.0, 0.0, 4.0])
        group_ids = np.array([0, 1, 0, 1])
        with pytest.raises(TrainingError, match="contiguous"):
            train(X, labels, group_ids, generic_schema(2), TrainParams(num_trees=1))

    def test_same_seed_byte_identical_models(self):
        X, labels, group_ids = ranking_problem(107, n_groups=12)
        params = TrainParams(num_trees=10, max_depth=4, min_examples_per_leaf=2, seed=5)
        schema = generic_schema(X.shape[1])
        m1 = train(X, labels, group_ids, schema, params).model
        m2 = train(X, labels, group_ids, schema, params).model
        assert serialize_model(m1) == serialize_model(m2)

    def test_thread_count_does_not_change_model(self):
        X, labels, group_ids = ranking_problem(109, n_groups=16)
        params = TrainParams(num_trees=8, max_depth=4, min_examples_per_leaf=2)
        schema = generic_schema(X.shape[1])
        m1 = train(X, labels, group_ids, schema, params, n_threads=1).model
        m4 = train(X, labels, group_ids, schema, params, n_threads=4).model
        assert serialize_model(m1) == serialize_model(m4)

    def test_valid_history_recorded(self, tmp_path):
        X, labels, group_ids = ranking_problem(113, n_groups=12)
        Xv, lv, gv = ranking_problem(991, n_groups=4)
        params = TrainParams(num_trees=5, max_depth=3, min_examples_per_leaf=2)
        result = train(
            X, labels, group_ids, generic_schema(X.shape[1]), params,
            valid=(Xv, lv, gv),
        )
        assert all(r.valid_ndcg is not None for r in result.history)
        log = tmp_path / "train.log"
        write_training_log(result.history, str(log))
        lines = log.read_text().strip().split("\n")
        assert len(lines) == 5
        assert all(len(line.split("\t")) == 3 for line in lines)

    def test_oblique_flag_trains_and_is_deterministic(self):
        X, labels, group_ids = ranking_problem(127, n_groups=10)
        params = TrainParams(
            num_trees=5, max_depth=3, min_examples_per_leaf=2,
            oblique=True, oblique_projections=5, oblique_sparsity=0.6, seed=11,
        )
        schema = generic_schema(X.shape[1])
        m1 = train(X, labels, group_ids, schema, params).model
        m2 = train(X, labels, group_ids, schema, params).model
        assert serialize_model(m1) == serialize_model(m2)


class TestPredict:
    def _manual_model(self, shrinkage=0.1, base=0.0):
        split = AxisSplit(feature=0, threshold=0.5, missing_left=False, gain=1.0)
        split.left = Leaf(value=-1.0, n_samples=1)
        split.right = Leaf(value=2.0, n_samples=1)
        return Model(
            trees=(Tree(root=split),),
            shrinkage=shrinkage,
            base_score=base,
            schema=generic_schema(2),
            params=TrainParams(num_trees=1),
        )

    def test_hand_traced_single_split(self):
        model = self._manual_model()
        assert model.predict(np.array([0.3, 9.0])) == pytest.approx(-0.1)
        assert model.predict(np.array([0.7, 9.0])) == pytest.approx(0.2)

    def test_missing_routed_by_learned_direction(self):
        model = self._manual_model()
        assert model.predict(np.array([np.nan, 1.0])) == pytest.approx(0.2)

    def test_zero_leaf_model_returns_base_score(self):
        split = AxisSplit(feature=0, threshold=0.0, missing_left=True, gain=0.0)
        split.left = Leaf(value=0.0)
        split.right = Leaf(value=0.0)
        model = Model(
            trees=(Tree(root=split),), shrinkage=0.1, base_score=1.25,
            schema=generic_schema(2), params=TrainParams(num_trees=1),
        )
        assert model.predict(np.array([3.0, -1.0])) == 1.25

    def test_all_missing_vector_scores_finite(self):
        X, labels, group_ids = ranking_problem(131, n_groups=10)
        params = TrainParams(num_trees=5, max_depth=3, min_examples_per_leaf=2)
        model = train(X, labels, group_ids, generic_schema(X.shape[1]), params).model
        value = model.predict(np.full(X.shape[1], np.nan))
        assert np.isfinite(value)

    def test_schema_mismatch_rejected(self):
        model = self._manual_model()
        with pytest.raises(ValueError, match="length 2"):
            model.predict(np.array([1.0, 2.0, 3.0]))

    def test_matrix_and_single_agree(self):
        X, labels, group_ids = ranking_problem(137, n_groups=10)
        params = TrainParams(num_trees=6, max_depth=4, min_examples_per_leaf=2)
        model = train(X, labels, group_ids, generic_schema(X.shape[1]), params).model
        rng = np.random.default_rng(4)
        Xq = rng.normal(size=(40, X.shape[1]))
        Xq[rng.random(size=Xq.shape) < 0.2] = np.nan
        batch = model.predict_matrix(Xq)
        single = np.array([model.predict(row) for row in Xq])
        np.testing.assert_array_equal(batch, single)

    def test_packed_agrees_with_tree_walk(self):
        X, labels, group_ids = ranking_problem(139, n_groups=10)
        params = TrainParams(num_trees=6, max_depth=4, min_examples_per_leaf=2)
        model = train(X, labels, group_ids, generic_schema(X.shape[1]), params).model
        rng = np.random.default_rng(8)
        Xq = rng.normal(size=(25, X.shape[1]))
        packed = model.predict_matrix(Xq)
        walked = model.base_score + model.shrinkage * sum(
            tree.predict_matrix(Xq) for tree in model.trees
        )
        np.testing.assert_allclose(packed, walked, rtol=0, atol=1e-12)

    def test_base_score_shift_preserves_order(self):
        X, labels, group_ids = ranking_problem(149, n_groups=6)
        params = TrainParams(num_trees=4, max_depth=3, min_examples_per_leaf=2)
        model = train(X, labels, group_ids, generic_schema(X.shape[1]), params).model
        rng = np.random.default_rng(10)
        Xq = rng.normal(size=(30, X.shape[1]))
        s1 = model.predict_matrix(Xq)
        shifted = Model(
            trees=model.trees, shrinkage=model.shrinkage,
            base_score=model.base_score + 10.0, schema=model.schema,
            params=model.params,
        )
        s2 = shifted.predict_matrix(Xq)
        np.testing.assert_array_equal(np.argsort(-s1), np.argsort(-s2))
