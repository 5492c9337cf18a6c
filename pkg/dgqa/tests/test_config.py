import json

import pytest

from dgqa.config import config_from_dict, config_hash, config_to_dict, load_experiment_config
from dgqa.errors import ArtifactError, InputValidationError
from dgqa.schemas import TargetSpec, TrainConfig
from dgqa.tests.conftest import SMALL_CONFIG


class TestLoadExperimentConfig:
    def test_relative_paths_resolve_against_the_file(self, tmp_path, reference_dir):
        raw = {**SMALL_CONFIG, "references_dir": str(reference_dir), "output_dir": "runs/x"}
        path = tmp_path / "cfg" / "c.json"
        path.parent.mkdir()
        path.write_text(json.dumps(raw), encoding="utf-8")
        config = load_experiment_config(path)
        assert config.output_dir == (tmp_path / "cfg").resolve() / "runs" / "x"
        assert config.domain_ids == [1, 11, 22]

    def test_overrides(self, config_file, tmp_path):
        config = load_experiment_config(config_file, seed=7, output_dir=str(tmp_path / "other"), tau=None)
        assert config.seed == 7
        assert config.output_dir == tmp_path / "other"
        assert config.tau is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactError):
            load_experiment_config(tmp_path / "none.json")

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ArtifactError):
            load_experiment_config(path)

    @pytest.mark.parametrize("change", [
        {"levels": [0, 1]},
        {"tau": 1.5},
        {"n_repeats": 0},
        {"plcc_mode": "cubic"},
        {"targets": []},
        {"regressor_heads": []},
        {"regressor_heads": ["cubic"]},
        {"regressor_heads": ["mlp", "mlp"]},
    ])
    def test_schema_violations(self, reference_dir, change):
        with pytest.raises(InputValidationError):
            config_from_dict({**SMALL_CONFIG, "references_dir": str(reference_dir), **change})

    def test_missing_reference_dir(self, tmp_path):
        with pytest.raises(InputValidationError):
            config_from_dict({**SMALL_CONFIG, "references_dir": str(tmp_path / "absent")})

    def test_duplicate_target_names(self, reference_dir):
        targets = SMALL_CONFIG["targets"] * 2
        with pytest.raises(InputValidationError):
            config_from_dict({**SMALL_CONFIG, "references_dir": str(reference_dir), "targets": targets})


class TestConfigHash:
    def test_stable_and_sensitive(self, config_file):
        a = load_experiment_config(config_file)
        b = config_from_dict(config_to_dict(a))
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(load_experiment_config(config_file, seed=1))


class TestSchemas:
    def test_train_defaults(self):
        train = TrainConfig()
        assert (train.learning_rate, train.weight_decay, train.batch_size, train.epochs) == (1e-3, 5e-4, 32, 15)

    def test_fine_tuning_preset(self):
        assert TrainConfig.fine_tune_preset().learning_rate == 2e-5

    def test_target_needs_exactly_one_source(self, tmp_path):
        with pytest.raises(ValueError):
            TargetSpec(name="t")
        with pytest.raises(ValueError):
            TargetSpec(name="t", image_dir=tmp_path, recipe={"components": [{"family": 1}]})

    def test_component_levels(self):
        with pytest.raises(ValueError):
            TargetSpec(name="t", recipe={"components": [{"family": 1, "levels": [6]}]})

    def test_regressor_heads_default_to_mlp(self, reference_dir):
        raw = {k: v for k, v in SMALL_CONFIG.items() if k != "regressor_heads"}
        config = config_from_dict({**raw, "references_dir": str(reference_dir)})
        assert config.regressor_heads == ["mlp"]
