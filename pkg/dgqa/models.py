"""
Domain entities: rasters, distortion specs and labeled domain datasets.

All entities are immutable values. Pixel arrays are made read-only on
construction so an image can be shared between threads without copying.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from dgqa.constants import CHANNELS, MIN_IMAGE_SIDE, SEVERITY_LEVELS
from dgqa.errors import InputValidationError


@dataclass(frozen=True, eq=False)
class RasterImage:
    """
    3-channel floating raster with intensities in [0, 1], shape (height, width, 3).

    Args:
        pixels: Array of shape (H, W, 3); H and W must be at least 64
    """
    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != CHANNELS:
            raise InputValidationError(f"Expected an (H, W, 3) raster, got shape {arr.shape}")
        if arr.shape[0] < MIN_IMAGE_SIDE or arr.shape[1] < MIN_IMAGE_SIDE:
            raise InputValidationError(
                f"Raster must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {arr.shape[1]}x{arr.shape[0]}"
            )
        if not np.all(np.isfinite(arr)):
            raise InputValidationError("Raster contains non-finite intensities")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InputValidationError("Raster intensities must lie in [0, 1]")
        if arr is self.pixels:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "RasterImage":
        """Build a raster from arbitrary real values, clamping to [0, 1]"""
        arr = np.nan_to_num(np.asarray(values, dtype=np.float64), nan=0.0, posinf=1.0, neginf=0.0)
        return cls(np.clip(arr, 0.0, 1.0))

    @classmethod
    def constant(cls, value: float, height: int = MIN_IMAGE_SIDE, width: int = MIN_IMAGE_SIDE) -> "RasterImage":
        return cls(np.full((height, width, CHANNELS), float(value)))

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.pixels.shape

    def same_as(self, other: "RasterImage") -> bool:
        """Bit-identical comparison"""
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    def crop(self, top: int, left: int, size: int) -> "RasterImage":
        return RasterImage(self.pixels[top:top + size, left:left + size, :].copy())

    def flipped(self) -> "RasterImage":
        """Horizontal flip"""
        return RasterImage(self.pixels[:, ::-1, :].copy())

    def __repr__(self):
        return f"<RasterImage({self.width}x{self.height})>"


@dataclass(frozen=True)
class DistortionSpec:
    """Distortion family id, severity level 1..5 and RNG seed for stochastic operators"""
    family: int
    level: int
    seed: int = 0

    def __post_init__(self):
        integral = not isinstance(self.level, bool) and float(self.level).is_integer()
        if not integral or int(self.level) not in SEVERITY_LEVELS:
            raise InputValidationError(f"Severity level must be an integer in 1..5, got {self.level}")
        object.__setattr__(self, "level", int(self.level))
        if self.seed < 0:
            raise InputValidationError(f"Seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class DomainSample:
    """One distorted image with its pseudo-MOS and provenance"""
    sample_id: str
    image: RasterImage
    quality: float
    reference_id: str
    level: Optional[int] = None


@dataclass(frozen=True)
class DomainDataset:
    """
    Labeled source domain: every sample comes from the same distortion family.

    Higher quality values mean better quality.
    """
    domain: int
    samples: Tuple[DomainSample, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        for sample in self.samples:
            if not np.isfinite(sample.quality):
                raise InputValidationError(f"Non-finite quality for sample {sample.sample_id}")
            if not sample.reference_id:
                raise InputValidationError(f"Sample {sample.sample_id} has no reference_id")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def qualities(self) -> np.ndarray:
        return np.array([s.quality for s in self.samples], dtype=np.float64)

    @property
    def reference_ids(self) -> List[str]:
        return [s.reference_id for s in self.samples]

    def filter_references(self, reference_ids: Iterable[str]) -> "DomainDataset":
        """Keep only samples whose reference is in the given set"""
        keep = set(reference_ids)
        return replace(self, samples=tuple(s for s in self.samples if s.reference_id in keep))

    def map_quality(self, fn: Callable[[float], float]) -> "DomainDataset":
        return replace(self, samples=tuple(replace(s, quality=float(fn(s.quality))) for s in self.samples))


@dataclass(frozen=True)
class TargetSet:
    """
    Target-domain images. Labels are optional and only present on the
    evaluation path; the selection path never needs them.
    """
    name: str
    image_ids: Tuple[str, ...]
    images: Tuple[RasterImage, ...]
    reference_ids: Tuple[str, ...] = ()
    labels: Optional[np.ndarray] = None
    provenance: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "image_ids", tuple(self.image_ids))
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "reference_ids", tuple(self.reference_ids))
        if len(self.image_ids) != len(self.images):
            raise InputValidationError("Target image ids and images differ in length")
        if self.reference_ids and len(self.reference_ids) != len(self.images):
            raise InputValidationError("Target reference ids and images differ in length")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.float64)
            if labels.shape != (len(self.images),):
                raise InputValidationError("Target labels must have one value per image")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def subset(self, indices: Sequence[int]) -> "TargetSet":
        idx = list(indices)
        return TargetSet(
            name=self.name,
            image_ids=tuple(self.image_ids[i] for i in idx),
            images=tuple(self.images[i] for i in idx),
            reference_ids=tuple(self.reference_ids[i] for i in idx) if self.reference_ids else (),
            labels=None if self.labels is None else self.labels[idx],
            provenance={self.image_ids[i]: self.provenance[self.image_ids[i]]
                        for i in idx if self.image_ids[i] in self.provenance},
        )

    def without_labels(self) -> "TargetSet":
        return replace(self, labels=None)
