"""
Runtime configuration for dgqa.

Environment variables:
    DGQA_LOG_LEVEL   logging level name (default INFO)
    DGQA_OUTPUT_DIR  output directory used when a config file does not set one
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError

from dgqa.errors import ArtifactError, InputValidationError
from dgqa.schemas import ExperimentConfig

LOG_LEVEL = os.getenv("DGQA_LOG_LEVEL", "INFO")
DEFAULT_OUTPUT_DIR = os.getenv("DGQA_OUTPUT_DIR", "runs/default")
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once for CLI use"""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format=LOG_FORMAT,
    )


def _resolve_paths(raw: Dict[str, Any], base_dir: Path) -> Dict[str, Any]:
    """Make relative paths in a raw config relative to the config file's directory"""
    resolved = dict(raw)
    for key in ("references_dir", "output_dir"):
        if key in resolved and resolved[key] is not None and not Path(resolved[key]).is_absolute():
            resolved[key] = str(base_dir / resolved[key])
    targets = []
    for target in resolved.get("targets", []):
        target = dict(target)
        for key in ("image_dir", "labels_path"):
            if target.get(key) and not Path(target[key]).is_absolute():
                target[key] = str(base_dir / target[key])
        targets.append(target)
    if targets:
        resolved["targets"] = targets
    return resolved


def load_experiment_config(path: Union[str, Path], **overrides: Any) -> ExperimentConfig:
    """
    Load and validate an experiment configuration file.

    Args:
        path: JSON config file
        overrides: Top-level fields replacing values from the file (e.g. seed, output_dir)

    Returns:
        Validated ExperimentConfig

    Raises:
        ArtifactError: If the file cannot be read or is not JSON
        InputValidationError: If the content violates the schema
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"Cannot read config ({e})", path) from e

    raw.setdefault("output_dir", DEFAULT_OUTPUT_DIR)
    raw = _resolve_paths(raw, path.resolve().parent)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw, source=str(path))


def config_from_dict(raw: Dict[str, Any], source: str = "<dict>") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise InputValidationError(f"Invalid config {source}: {e}") from e


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json")


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON dump"""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
