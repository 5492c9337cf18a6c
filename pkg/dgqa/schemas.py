"""
Pydantic schemas for configuration, manifests and reports.

Every default stated here is the documented default of the corresponding
setting; a JSON config file only needs to name what it changes.
"""

from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from dgqa.constants import DEFAULT_HIDDEN, DEFAULT_REPEATS, DEFAULT_SPLIT_RATIO, MIN_IMAGE_SIDE, SEVERITY_LEVELS


class TrainConfig(BaseModel):
    """
    Optimizer and schedule settings shared by the domain classifier and the
    quality regressor.
    """
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(1e-3, gt=0, description="Adam step size")
    weight_decay: float = Field(5e-4, ge=0, description="Decoupled weight decay factor")
    batch_size: int = Field(32, ge=1, description="Mini-batch size")
    epochs: int = Field(15, ge=1, description="Number of passes over the training pool")
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    hidden: Optional[int] = Field(DEFAULT_HIDDEN, ge=1, description="Hidden tanh width; None for a linear head")
    val_ratio: float = Field(0.2, ge=0, lt=1, description="Fraction of references held out for validation logging")
    balance_domains: bool = Field(False, description="Oversample small domains to equal size")
    seed: int = Field(0, ge=0)

    @classmethod
    def fine_tune_preset(cls, **overrides) -> "TrainConfig":
        """Fine-tuning learning rate used with a pretrained backbone"""
        return cls(**{"learning_rate": 2e-5, **overrides})


class PatchMode(str, Enum):
    TRAIN = "train"
    TEST = "test"


class PatchPolicy(BaseModel):
    """Random-crop policy used for training rows and test-time averaging"""
    model_config = ConfigDict(frozen=True)

    patch_size: int = Field(64, ge=MIN_IMAGE_SIDE)
    train_patches_per_image: int = Field(1, ge=1)
    test_patches_per_image: int = Field(5, ge=1)
    seed: int = Field(0, ge=0)


class CompositionMode(str, Enum):
    SINGLE_DRAW = "single_draw"
    STRATIFIED = "stratified"
    STACKED = "stacked"


class MixtureComponent(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: int
    levels: List[int] = Field(default_factory=lambda: list(SEVERITY_LEVELS), min_length=1)
    weight: float = Field(1.0, gt=0)

    @field_validator("levels")
    @classmethod
    def _levels_in_range(cls, levels: List[int]) -> List[int]:
        bad = [lv for lv in levels if lv not in SEVERITY_LEVELS]
        if bad:
            raise ValueError(f"levels must lie in 1..5, got {bad}")
        return sorted(set(levels))


class TargetMixtureRecipe(BaseModel):
    """Desk-scale stand-in for an authentic-distortion target"""
    model_config = ConfigDict(frozen=True)

    components: List[MixtureComponent] = Field(..., min_length=1)
    mode: CompositionMode = CompositionMode.SINGLE_DRAW

    @property
    def weights(self) -> List[float]:
        total = sum(c.weight for c in self.components)
        return [c.weight / total for c in self.components]


class TargetSpec(BaseModel):
    """A target domain: either a synthesized mixture or an external image directory"""
    model_config = ConfigDict(frozen=True)

    name: str = Field(..., min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    recipe: Optional[TargetMixtureRecipe] = None
    image_dir: Optional[Path] = None
    labels_path: Optional[Path] = None
    n_images: int = Field(40, ge=1)

    @model_validator(mode="after")
    def _one_source(self) -> "TargetSpec":
        if (self.recipe is None) == (self.image_dir is None):
            raise ValueError(f"target '{self.name}' needs exactly one of recipe or image_dir")
        for path in (self.image_dir, self.labels_path):
            if path is not None and not Path(path).exists():
                raise ValueError(f"target '{self.name}': path does not exist: {path}")
        return self


class ExperimentConfig(BaseModel):
    """Top-level configuration of a desk-scale run"""
    model_config = ConfigDict(frozen=True)

    references_dir: Path
    output_dir: Path = Path("runs/default")
    domain_ids: Optional[List[int]] = Field(None, description="Registry subset; None for the full registry")
    levels: List[int] = Field(default_factory=lambda: list(SEVERITY_LEVELS), min_length=1)
    targets: List[TargetSpec] = Field(..., min_length=1)
    target_reference_fraction: float = Field(0.25, gt=0, lt=1)
    inverted_domains: List[int] = Field(default_factory=list)
    tau: Optional[float] = Field(None, gt=0, lt=1)
    train: TrainConfig = Field(default_factory=TrainConfig)
    patch: PatchPolicy = Field(default_factory=PatchPolicy)
    split_ratio: float = Field(DEFAULT_SPLIT_RATIO, gt=0, lt=1)
    n_repeats: int = Field(DEFAULT_REPEATS, ge=1)
    gds_max_rounds: int = Field(15, ge=1)
    plcc_mode: str = Field("logistic", pattern=r"^(logistic|raw)$")
    regressor_heads: List[Literal["mlp", "linear"]] = Field(
        default_factory=lambda: ["mlp"], min_length=1,
        description="Regressor heads compared in evaluation; \"mlp\" uses train.hidden, \"linear\" drops the hidden layer")
    compute_distances: bool = False
    seed: int = Field(0, ge=0)

    @field_validator("references_dir")
    @classmethod
    def _references_exist(cls, path: Path) -> Path:
        if not Path(path).is_dir():
            raise ValueError(f"reference corpus directory does not exist: {path}")
        return path

    @field_validator("levels")
    @classmethod
    def _levels_in_range(cls, levels: List[int]) -> List[int]:
        bad = [lv for lv in levels if lv not in SEVERITY_LEVELS]
        if bad:
            raise ValueError(f"levels must lie in 1..5, got {bad}")
        return sorted(set(levels))

    @field_validator("regressor_heads")
    @classmethod
    def _unique_heads(cls, heads: List[str]) -> List[str]:
        if len(heads) != len(set(heads)):
            raise ValueError(f"regressor heads must be unique, got {heads}")
        return heads

    @model_validator(mode="after")
    def _unique_target_names(self) -> "ExperimentConfig":
        names = [t.name for t in self.targets]
        if len(names) != len(set(names)):
            raise ValueError(f"target names must be unique, got {names}")
        return self


class SampleRecord(BaseModel):
    """One manifest row"""
    image_path: str
    reference_id: str = Field(..., min_length=1)
    quality: float
    level: Optional[int] = None


class DatasetManifest(BaseModel):
    """JSON manifest of one synthesized source domain"""
    name: str
    domain_id: int
    samples: List[SampleRecord]


class TargetManifest(BaseModel):
    """Unlabeled image list of one target; labels live in a separate file"""
    name: str
    images: List[str]
    reference_ids: List[str] = Field(default_factory=list)


class SelectionEntry(BaseModel):
    domain_id: int
    family_name: str
    sim: float
    selected: bool


class SelectionReportFile(BaseModel):
    """Machine-readable similar-domain table for one target, sorted by sim descending"""
    target: str
    tau: float
    n_target: int
    method: str = "dgds"
    entries: List[SelectionEntry]

    @property
    def selected_ids(self) -> List[int]:
        return [e.domain_id for e in self.entries if e.selected]


class RunEvent(BaseModel):
    stage: str
    outcome: str
    timestamp: str
    details: Dict[str, object] = Field(default_factory=dict)
