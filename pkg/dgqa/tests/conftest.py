"""
Shared fixtures: procedural references, small source domains and a finished
desk-scale run that several test modules inspect.
"""

import json
from pathlib import Path
from typing import Any, Dict

import pytest

from dgqa import storage
from dgqa.config import load_experiment_config
from dgqa.services.audit_service import RunAudit
from dgqa.services.distortion_service import generate_domain
from dgqa.services.experiment_service import FeatureStore, load_corpus, run_gds, run_pipeline
from dgqa.services.reference_service import synthesize_references

SMALL_DOMAINS = (1, 11, 22)

SMALL_CONFIG: Dict[str, Any] = {
    "domain_ids": list(SMALL_DOMAINS),
    "levels": [1, 3, 5],
    "target_reference_fraction": 0.25,
    "targets": [
        {
            "name": "noise_mix",
            "recipe": {"components": [{"family": 11}, {"family": 1}], "mode": "stratified"},
            "n_images": 12,
        }
    ],
    "train": {"epochs": 3, "batch_size": 16},
    "patch": {"patch_size": 64, "train_patches_per_image": 1, "test_patches_per_image": 2},
    "n_repeats": 2,
    "gds_max_rounds": 3,
    "regressor_heads": ["mlp", "linear"],
    "seed": 0,
}


def write_config(path: Path, references_dir: Path, output_dir: Path, **overrides: Any) -> Path:
    """Write a small experiment config with absolute paths"""
    raw = {**SMALL_CONFIG, "references_dir": str(references_dir), "output_dir": str(output_dir), **overrides}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(raw, indent=2), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def references():
    return synthesize_references(6, size=64, seed=0)


@pytest.fixture(scope="session")
def reference(references):
    return references[0]


@pytest.fixture(scope="session")
def small_domains(references):
    return [generate_domain(references, family, [1, 3, 5], seed=family) for family in SMALL_DOMAINS]


@pytest.fixture(scope="session")
def reference_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("references")
    storage.save_references(synthesize_references(8, size=64, seed=0), directory)
    return directory


@pytest.fixture
def config_file(tmp_path, reference_dir):
    return write_config(tmp_path / "config.json", reference_dir, tmp_path / "run")


@pytest.fixture(scope="session")
def completed_run(tmp_path_factory, reference_dir):
    """A pipeline run followed by greedy selection; returns (config, layout, pipeline summary)"""
    root = tmp_path_factory.mktemp("completed")
    config = load_experiment_config(write_config(root / "config.json", reference_dir, root / "run"))
    with RunAudit(config, "pipeline") as audit:
        summary = run_pipeline(config, audit)
        features = FeatureStore(config.patch, audit.layout)
        domains = load_corpus(config, audit.layout)
        selected = {name: info["selected"] for name, info in summary["targets"].items()}
        with audit.stage("gds"):
            run_gds(config, audit.layout, domains, selected, features)
    return config, audit.layout, summary
