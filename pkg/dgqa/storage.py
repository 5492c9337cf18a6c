"""
Artifact storage for dgqa runs.

PNG rasters through Pillow, JSON documents with sorted keys and fixed
indentation, CSV tables through pandas. Target labels live in their own file so
the selection path can load a target without ever opening them.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image

from dgqa import constants as C
from dgqa.errors import ArtifactError, InputValidationError
from dgqa.models import DomainDataset, DomainSample, RasterImage, TargetSet
from dgqa.schemas import DatasetManifest, SampleRecord, TargetManifest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FEATURE_COLUMNS = [f"f{i:02d}" for i in range(C.FEATURE_DIM)]
MANIFEST_NAME = "manifest.json"
TARGET_LIST_NAME = "images.json"
TARGET_LABELS_NAME = "labels.json"
TARGET_PROVENANCE_NAME = "provenance.json"


@dataclass(frozen=True)
class RunLayout:
    """Directory layout of one run"""
    root: Path

    @property
    def domains(self) -> Path:
        return self.root / "domains"

    @property
    def targets(self) -> Path:
        return self.root / "targets"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def selection(self) -> Path:
        return self.root / "selection"

    @property
    def results(self) -> Path:
        return self.root / "results"

    @property
    def features(self) -> Path:
        return self.root / "features"

    @property
    def run_record(self) -> Path:
        return self.root / "run.json"

    @property
    def lock(self) -> Path:
        return self.root / ".dgqa.lock"

    @property
    def classifier(self) -> Path:
        return self.models / "domain_classifier.json"

    def target_dir(self, name: str) -> Path:
        return self.targets / name

    def selection_file(self, target: str) -> Path:
        return self.selection / f"{target}.json"

    def regressor(self, target: str, setting: str) -> Path:
        return self.models / f"regressor_{target}_{setting}.json"


# ---------- primitives ----------------------------------------------------------

def save_image(image: RasterImage, path: PathLike) -> Path:
    """
    Write an 8-bit RGB PNG (values quantized as round(x * 255)).

    Raises:
        ArtifactError: If the file cannot be written
    """
    path = Path(path)
    data = np.round(image.pixels * 255.0).astype(np.uint8)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(data, mode="RGB").save(path, format="PNG")
    except OSError as e:
        raise ArtifactError(f"Cannot write image ({e})", path) from e
    return path


def load_image(path: PathLike) -> RasterImage:
    """
    Read any Pillow-readable image as an RGB raster in [0, 1].

    Raises:
        ArtifactError: Missing or unreadable file
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as e:
        raise ArtifactError(f"Cannot read image ({e})", path) from e
    try:
        return RasterImage(data)
    except InputValidationError as e:
        raise InputValidationError(f"{path}: {e}") from e


def write_json(path: PathLike, payload: Any) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Cannot write JSON ({e})", path) from e
    return path


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ArtifactError(f"Cannot read JSON ({e})", path) from e
    except json.JSONDecodeError as e:
        raise ArtifactError(f"Malformed JSON ({e})", path) from e


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as e:
        raise ArtifactError(f"Cannot write CSV ({e})", path) from e
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except OSError as e:
        raise ArtifactError(f"Cannot read CSV ({e})", path) from e


def require(paths: Sequence[PathLike]) -> None:
    """
    Raises:
        ArtifactError: Listing every path that does not exist
    """
    missing = [Path(p) for p in paths if not Path(p).exists()]
    if missing:
        raise ArtifactError("Missing run artifacts", missing)


# ---------- reference corpus ------------------------------------------------------

def save_references(images: Sequence[RasterImage], directory: PathLike) -> List[Path]:
    directory = Path(directory)
    return [save_image(img, directory / f"ref_{i:04d}.png") for i, img in enumerate(images)]


def load_references(directory: PathLike) -> Tuple[List[str], List[RasterImage]]:
    """
    Load a directory of PNG references, ordered by file name.

    Returns:
        (reference ids taken from the file stems, rasters)

    Raises:
        ArtifactError: If the directory is missing or holds no PNG files
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ArtifactError("Reference corpus directory does not exist", directory)
    files = sorted(directory.glob("*.png"))
    if not files:
        raise ArtifactError("Reference corpus holds no PNG images", directory)
    return [f.stem for f in files], [load_image(f) for f in files]


# ---------- source domains --------------------------------------------------------

def domain_dir_name(domain: int, name: str) -> str:
    return f"d{domain:02d}_{name}" if name else f"d{domain:02d}"


def save_domain(dataset: DomainDataset, root: PathLike) -> Path:
    """
    Write one source domain as PNG files plus a manifest.

    Args:
        dataset: Domain to write
        root: Parent directory (one sub-directory per domain)

    Returns:
        Path of the written manifest
    """
    directory = Path(root) / domain_dir_name(dataset.domain, dataset.name)
    records = []
    for sample in dataset.samples:
        rel = Path("images") / f"{sample.sample_id}.png"
        save_image(sample.image, directory / rel)
        records.append(SampleRecord(image_path=rel.as_posix(), reference_id=sample.reference_id,
                                    quality=sample.quality, level=sample.level))
    manifest = DatasetManifest(name=dataset.name, domain_id=dataset.domain, samples=records)
    return write_json(directory / MANIFEST_NAME, manifest.model_dump(mode="json"))


def load_domain(manifest_path: PathLike) -> DomainDataset:
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.model_validate(read_json(manifest_path))
    base = manifest_path.parent
    samples = [
        DomainSample(
            sample_id=Path(rec.image_path).stem,
            image=load_image(base / rec.image_path),
            quality=rec.quality,
            reference_id=rec.reference_id,
            level=rec.level,
        )
        for rec in manifest.samples
    ]
    return DomainDataset(domain=manifest.domain_id, samples=tuple(samples), name=manifest.name)


def load_domains(root: PathLike, domain_ids: Optional[Sequence[int]] = None) -> List[DomainDataset]:
    """
    Load every domain manifest below root, ordered by domain id.

    Raises:
        ArtifactError: No manifests found, or a requested domain is absent
    """
    root = Path(root)
    manifests = sorted(root.glob(f"*/{MANIFEST_NAME}"))
    if not manifests:
        raise ArtifactError("No synthesized domains found; run 'synth' first", root)
    domains = sorted((load_domain(m) for m in manifests), key=lambda d: d.domain)
    if domain_ids is not None:
        present = {d.domain for d in domains}
        missing = [i for i in domain_ids if i not in present]
        if missing:
            raise ArtifactError(f"Domains {missing} were not synthesized", root)
        domains = [d for d in domains if d.domain in set(domain_ids)]
    logger.info(f"Loaded {len(domains)} domains from {root}")
    return domains


# ---------- targets --------------------------------------------------------------

def save_target(target: TargetSet, root: PathLike) -> Path:
    """
    Write a target: images, an unlabeled image list, and (separately) labels
    and provenance.

    Returns:
        The target directory
    """
    directory = Path(root) / target.name
    images = []
    for image_id, image in zip(target.image_ids, target.images):
        rel = Path("images") / f"{image_id}.png"
        save_image(image, directory / rel)
        images.append(rel.as_posix())
    manifest = TargetManifest(name=target.name, images=images, reference_ids=list(target.reference_ids))
    write_json(directory / TARGET_LIST_NAME, manifest.model_dump(mode="json"))
    if target.labels is not None:
        write_json(directory / TARGET_LABELS_NAME,
                   {image_id: float(v) for image_id, v in zip(target.image_ids, target.labels)})
    if target.provenance:
        write_json(directory / TARGET_PROVENANCE_NAME, dict(target.provenance))
    return directory


def load_target(directory: PathLike) -> TargetSet:
    """Load target images and provenance; labels are never read here"""
    directory = Path(directory)
    manifest = TargetManifest.model_validate(read_json(directory / TARGET_LIST_NAME))
    provenance_path = directory / TARGET_PROVENANCE_NAME
    provenance = read_json(provenance_path) if provenance_path.exists() else {}
    return TargetSet(
        name=manifest.name,
        image_ids=tuple(Path(p).stem for p in manifest.images),
        images=tuple(load_image(directory / p) for p in manifest.images),
        reference_ids=tuple(manifest.reference_ids),
        provenance=provenance,
    )


def load_target_labels(directory: PathLike, target: TargetSet) -> Optional[np.ndarray]:
    """
    Labels aligned with target.image_ids, or None when the label file is absent.

    Raises:
        ArtifactError: If the label file does not cover every image
    """
    path = Path(directory) / TARGET_LABELS_NAME
    if not path.exists():
        return None
    labels = read_json(path)
    missing = [i for i in target.image_ids if i not in labels]
    if missing:
        raise ArtifactError(f"Labels missing for {len(missing)} target images", path)
    return np.array([labels[i] for i in target.image_ids], dtype=np.float64)


def load_labels_file(path: PathLike, target: TargetSet) -> np.ndarray:
    """Labels for an external target: JSON object or CSV with columns image, label"""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        frame = read_csv(path)
        mapping = {Path(str(k)).stem: float(v) for k, v in zip(frame["image"], frame["label"])}
    else:
        mapping = {Path(k).stem: float(v) for k, v in read_json(path).items()}
    missing = [i for i in target.image_ids if i not in mapping]
    if missing:
        raise ArtifactError(f"Labels missing for {len(missing)} target images", path)
    return np.array([mapping[i] for i in target.image_ids], dtype=np.float64)


def load_image_directory(name: str, directory: PathLike) -> TargetSet:
    """External unlabeled target: every readable image in a directory, sorted by name"""
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"})
    if not files:
        raise ArtifactError("Target image directory holds no images", directory)
    return TargetSet(name=name, image_ids=tuple(f.stem for f in files),
                     images=tuple(load_image(f) for f in files),
                     reference_ids=tuple(f.stem for f in files))


# ---------- models and feature caches -----------------------------------------------

def save_checkpoint(payload: Dict[str, Any], path: PathLike) -> Path:
    return write_json(path, payload)


def load_checkpoint(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError("Model checkpoint not found", path)
    return read_json(path)


def save_feature_cache(rows_by_key: Dict[str, np.ndarray], path: PathLike) -> Path:
    """One CSV row per patch: sample_id, f00 .. f35"""
    records = []
    for key in sorted(rows_by_key):
        for row in np.atleast_2d(rows_by_key[key]):
            records.append([key] + [float(v) for v in row])
    frame = pd.DataFrame(records, columns=["sample_id"] + FEATURE_COLUMNS)
    return write_csv(frame, path)


def load_feature_cache(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        return {}
    frame = read_csv(path)
    if list(frame.columns) != ["sample_id"] + FEATURE_COLUMNS:
        raise ArtifactError("Feature cache has unexpected columns", path)
    return {str(key): group[FEATURE_COLUMNS].to_numpy(dtype=np.float64)
            for key, group in frame.groupby("sample_id", sort=True)}
