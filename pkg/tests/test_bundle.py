"""
Tests for model bundle persistence
"""

import json

import numpy as np
import pytest

from src.core.bundle import dumps_bundle, load_bundle, save_bundle
from src.core.pipeline import PipelineConfig, predict_with_diagnostics, train_surrogate
from src.learning.clustering import ClusterConfig
from src.utils.exceptions import DatasetError


@pytest.fixture(scope="module")
def model(families):
    params, snapshots, _ = families
    config = PipelineConfig(clustering=ClusterConfig(subcluster="on", dbscan_eps=5.0), core_model="full")
    return train_surrogate(params, snapshots, config)


class TestBundle:
    def test_save_load_save_is_byte_identical(self, model, tmp_path):
        first = save_bundle(model, tmp_path / "model.json")
        second = save_bundle(load_bundle(first), tmp_path / "again.json")
        assert first.read_bytes() == second.read_bytes()

    def test_envelope(self, model):
        envelope = json.loads(dumps_bundle(model))
        assert envelope["format"] == "grassgp-model"
        assert envelope["version"] == 1
        assert envelope["model"]["config"]["clustering"]["subcluster"] == "on"

    def test_loaded_model_predicts_identically(self, model, families, tmp_path):
        params, _, _ = families
        loaded = load_bundle(save_bundle(model, tmp_path / "model.json"))
        assert loaded.config == model.config
        assert np.array_equal(loaded.labels, model.labels)
        assert np.array_equal(loaded.sublabels, model.sublabels)
        assert loaded.diagnostics.chosen_n_c == model.diagnostics.chosen_n_c
        assert loaded.sample_ids == model.sample_ids == [f"{index:04d}" for index in range(len(params))]
        for query in (params[3], params[47], [0.4, -0.6]):
            expected = predict_with_diagnostics(model, query)
            actual = predict_with_diagnostics(loaded, query)
            assert np.array_equal(actual.matrix, expected.matrix)
            assert (actual.cluster_id, actual.sublabel) == (expected.cluster_id, expected.sublabel)

    def test_sublabels_survive(self, model, tmp_path):
        loaded = load_bundle(save_bundle(model, tmp_path / "model.json"))
        for cluster in loaded.clusters:
            assert cluster.sublabels is not None
            assert np.all(cluster.sublabels == 0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            load_bundle(tmp_path / "absent.json")

    def test_not_json(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{\n"format": \n')
        with pytest.raises(DatasetError):
            load_bundle(path)

    def test_wrong_format(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"format": "something-else", "version": 1, "model": {}}))
        with pytest.raises(DatasetError):
            load_bundle(path)

    def test_unsupported_version(self, model, tmp_path):
        envelope = json.loads(dumps_bundle(model))
        envelope["version"] = 2
        path = tmp_path / "model.json"
        path.write_text(json.dumps(envelope))
        with pytest.raises(DatasetError) as info:
            load_bundle(path)
        assert info.value.context["version"] == 2

    def test_corrupt_model(self, model, tmp_path):
        envelope = json.loads(dumps_bundle(model))
        del envelope["model"]["clusters"]
        path = tmp_path / "model.json"
        path.write_text(json.dumps(envelope))
        with pytest.raises(DatasetError):
            load_bundle(path)

    def test_sample_id_count_must_match(self, model, tmp_path):
        envelope = json.loads(dumps_bundle(model))
        envelope["model"]["sample_ids"] = envelope["model"]["sample_ids"][:-1]
        path = tmp_path / "model.json"
        path.write_text(json.dumps(envelope))
        with pytest.raises(DatasetError):
            load_bundle(path)
