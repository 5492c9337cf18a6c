import json

import numpy as np
import pandas as pd
import pytest

from dgqa import storage
from dgqa.constants import FEATURE_DIM
from dgqa.errors import ArtifactError
from dgqa.models import RasterImage, TargetSet
from dgqa.storage import RunLayout


class TestPrimitives:
    def test_png_round_trip_is_quantized(self, reference, tmp_path):
        path = storage.save_image(reference, tmp_path / "img.png")
        loaded = storage.load_image(path)
        assert loaded.shape == reference.shape
        assert np.max(np.abs(loaded.pixels - reference.pixels)) <= 0.5 / 255 + 1e-12

    def test_missing_image(self, tmp_path):
        with pytest.raises(ArtifactError):
            storage.load_image(tmp_path / "nope.png")

    def test_json_is_sorted_and_indented(self, tmp_path):
        path = storage.write_json(tmp_path / "a.json", {"b": 1, "a": [1, 2]})
        text = path.read_text(encoding="utf-8")
        assert text.index('"a"') < text.index('"b"')
        assert storage.read_json(path) == {"a": [1, 2], "b": 1}

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ArtifactError):
            storage.read_json(path)

    def test_require_lists_missing_paths(self, tmp_path):
        (tmp_path / "present").write_text("x")
        with pytest.raises(ArtifactError) as excinfo:
            storage.require([tmp_path / "present", tmp_path / "a", tmp_path / "b"])
        assert excinfo.value.paths == [tmp_path / "a", tmp_path / "b"]

    def test_csv_round_trip(self, tmp_path):
        frame = pd.DataFrame({"x": [0.1, 1 / 3], "y": ["a", "b"]})
        loaded = storage.read_csv(storage.write_csv(frame, tmp_path / "t.csv"))
        assert loaded["x"].tolist() == [0.1, 1 / 3]


class TestReferencesAndDomains:
    def test_references(self, references, tmp_path):
        storage.save_references(references[:3], tmp_path / "refs")
        ids, images = storage.load_references(tmp_path / "refs")
        assert ids == ["ref_0000", "ref_0001", "ref_0002"]
        assert len(images) == 3

    def test_empty_reference_dir(self, tmp_path):
        with pytest.raises(ArtifactError):
            storage.load_references(tmp_path)

    def test_domain_round_trip(self, small_domains, tmp_path):
        dataset = small_domains[1]
        manifest = storage.save_domain(dataset, tmp_path)
        assert manifest.parent.name == "d11_white_noise"
        loaded = storage.load_domain(manifest)
        assert loaded.domain == 11
        assert [s.sample_id for s in loaded.samples] == [s.sample_id for s in dataset.samples]
        assert np.array_equal(loaded.qualities, dataset.qualities)
        assert loaded.reference_ids == dataset.reference_ids

    def test_load_domains(self, small_domains, tmp_path):
        for dataset in small_domains:
            storage.save_domain(dataset, tmp_path)
        assert [d.domain for d in storage.load_domains(tmp_path, [22, 1])] == [1, 22]
        with pytest.raises(ArtifactError):
            storage.load_domains(tmp_path, [2])
        with pytest.raises(ArtifactError):
            storage.load_domains(tmp_path / "empty")


class TestTargets:
    def _target(self):
        images = [RasterImage.constant(v) for v in (0.2, 0.5, 0.8)]
        return TargetSet("t", ("t_0000", "t_0001", "t_0002"), images, ("r0", "r1", "r1"),
                         labels=[10.0, 50.5, 90.25], provenance={"t_0000": "11/1"})

    def test_labels_live_in_their_own_file(self, tmp_path):
        directory = storage.save_target(self._target(), tmp_path)
        assert (directory / storage.TARGET_LABELS_NAME).exists()
        assert "label" not in (directory / storage.TARGET_LIST_NAME).read_text(encoding="utf-8")
        loaded = storage.load_target(directory)
        assert loaded.labels is None
        assert loaded.reference_ids == ("r0", "r1", "r1")
        assert loaded.provenance == {"t_0000": "11/1"}
        assert storage.load_target_labels(directory, loaded).tolist() == [10.0, 50.5, 90.25]

    def test_absent_labels(self, tmp_path):
        directory = storage.save_target(self._target().without_labels(), tmp_path)
        assert storage.load_target_labels(directory, storage.load_target(directory)) is None

    def test_external_directory_with_csv_labels(self, tmp_path):
        for i in range(3):
            storage.save_image(RasterImage.constant(0.1 * (i + 1)), tmp_path / "photos" / f"p{i}.png")
        target = storage.load_image_directory("photos", tmp_path / "photos")
        assert target.image_ids == ("p0", "p1", "p2")
        labels_path = tmp_path / "labels.csv"
        pd.DataFrame({"image": ["p2.png", "p0.png", "p1.png"], "label": [3.0, 1.0, 2.0]}).to_csv(labels_path, index=False)
        assert storage.load_labels_file(labels_path, target).tolist() == [1.0, 2.0, 3.0]

    def test_incomplete_json_labels(self, tmp_path):
        for i in range(2):
            storage.save_image(RasterImage.constant(0.5), tmp_path / "photos" / f"p{i}.png")
        target = storage.load_image_directory("photos", tmp_path / "photos")
        labels_path = tmp_path / "labels.json"
        labels_path.write_text(json.dumps({"p0": 1.0}), encoding="utf-8")
        with pytest.raises(ArtifactError):
            storage.load_labels_file(labels_path, target)


class TestCachesAndLayout:
    def test_feature_cache_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = {"b": rng.normal(size=(2, FEATURE_DIM)), "a": rng.normal(size=(1, FEATURE_DIM))}
        path = storage.save_feature_cache(rows, tmp_path / "cache.csv")
        loaded = storage.load_feature_cache(path)
        assert set(loaded) == {"a", "b"}
        assert all(np.array_equal(loaded[k], rows[k]) for k in rows)

    def test_missing_feature_cache_is_empty(self, tmp_path):
        assert storage.load_feature_cache(tmp_path / "none.csv") == {}

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(ArtifactError):
            storage.load_checkpoint(tmp_path / "model.json")

    def test_layout(self, tmp_path):
        layout = RunLayout(tmp_path)
        assert layout.selection_file("t") == tmp_path / "selection" / "t.json"
        assert layout.regressor("t", "dgqa") == tmp_path / "models" / "regressor_t_dgqa.json"
        assert layout.lock.name == ".dgqa.lock"
