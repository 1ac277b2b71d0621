import json

import numpy as np
import pytest

from channelrank.gbdt.model import TrainParams, train
from channelrank.gbdt.serialize import (
    MODEL_FORMAT_VERSION,
    ModelFormatError,
    load_model,
    loads_model,
    model_fingerprint,
    save_model,
    serialize_model,
)
from tests.test_gbdt_model import generic_schema, ranking_problem


@pytest.fixture(scope="module")
def trained():
    X, labels, group_ids = ranking_problem(211, n_groups=14)
    params = TrainParams(num_trees=12, max_depth=4, min_examples_per_leaf=2, seed=2)
    return train(X, labels, group_ids, generic_schema(X.shape[1]), params).model


@pytest.fixture(scope="module")
def oblique_trained():
    X, labels, group_ids = ranking_problem(223, n_groups=10)
    params = TrainParams(
        num_trees=4, max_depth=3, min_examples_per_leaf=2,
        oblique=True, oblique_projections=8, oblique_sparsity=0.6, seed=9,
    )
    return train(X, labels, group_ids, generic_schema(X.shape[1]), params).model


def random_queries(n_features, n=1000, seed=77, nan_frac=0.15):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n_features))
    X[rng.random(size=X.shape) < nan_frac] = np.nan
    return X


class TestRoundTrip:
    def test_bit_identical_scores_after_round_trip(self, trained):
        data = serialize_model(trained)
        restored = loads_model(data)
        Xq = random_queries(len(trained.schema))
        np.testing.assert_array_equal(
            trained.predict_matrix(Xq), restored.predict_matrix(Xq)
        )

    def test_file_round_trip(self, trained, tmp_path):
        path = tmp_path / "model.frm"
        save_model(trained, str(path))
        restored = load_model(str(path))
        Xq = random_queries(len(trained.schema), n=200, seed=5)
        np.testing.assert_array_equal(
            trained.predict_matrix(Xq), restored.predict_matrix(Xq)
        )
        assert restored.schema == trained.schema
        assert restored.params == trained.params

    def test_oblique_round_trip(self, oblique_trained):
        restored = loads_model(serialize_model(oblique_trained))
        Xq = random_queries(len(oblique_trained.schema), n=300, seed=6)
        np.testing.assert_array_equal(
            oblique_trained.predict_matrix(Xq), restored.predict_matrix(Xq)
        )

    def test_serialization_is_stable(self, trained):
        assert serialize_model(trained) == serialize_model(loads_model(serialize_model(trained)))

    def test_fingerprint_stable_and_distinct(self, trained, oblique_trained):
        assert model_fingerprint(trained) == model_fingerprint(
            loads_model(serialize_model(trained))
        )
        assert model_fingerprint(trained) != model_fingerprint(oblique_trained)


class TestCorruption:
    def test_truncated_payload_rejected(self, trained):
        data = serialize_model(trained)
        with pytest.raises(ModelFormatError):
            loads_model(data[: len(data) // 2])

    def test_flipped_byte_rejected(self, trained):
        data = bytearray(serialize_model(trained))
        # Flip a byte inside the payload region (after the header keys).
        idx = len(data) // 2
        data[idx] = ord("5") if data[idx] != ord("5") else ord("6")
        with pytest.raises(ModelFormatError):
            loads_model(bytes(data))

    def test_version_mismatch_rejected(self, trained):
        doc = json.loads(serialize_model(trained))
        doc["version"] = MODEL_FORMAT_VERSION + 1
        with pytest.raises(ModelFormatError, match="version"):
            loads_model(json.dumps(doc).encode())

    def test_bad_magic_rejected(self):
        with pytest.raises(ModelFormatError, match="magic"):
            loads_model(b'{"magic": "nope", "version": 1}')

    def test_non_json_rejected(self):
        with pytest.raises(ModelFormatError):
            loads_model(b"\x00\x01\x02binary-garbage")
