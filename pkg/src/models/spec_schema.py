"""
Declarative schemas for models, training runs and experiments.

Every schema forbids unknown keys so that a misspelled field in an
experiment file is rejected instead of silently ignored.
"""

import hashlib
import json
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BlockKind(str, Enum):
    CONV = "conv"
    BATCHNORM = "batchnorm"
    RELU = "relu"
    MAXPOOL = "maxpool"


class DatasetName(str, Enum):
    SYNTHETIC = "synthetic"
    MNIST = "mnist"
    CIFAR10 = "cifar10"


# Model description
class BlockSpec(_Strict):
    kind: BlockKind
    out_channels: Optional[int] = Field(default=None, ge=1)
    kernel: Optional[int] = Field(default=None, ge=1)
    stride: Optional[int] = Field(default=None, ge=1)
    padding: int = Field(default=0, ge=0)
    bias: bool = False

    @model_validator(mode="after")
    def _fill_defaults(self) -> "BlockSpec":
        if self.kind == BlockKind.CONV:
            if self.out_channels is None:
                raise ValueError("conv block needs out_channels")
            self.kernel = self.kernel or 3
            self.stride = self.stride or 1
        elif self.kind == BlockKind.MAXPOOL:
            self.kernel = self.kernel or 2
            self.stride = self.stride or self.kernel
        return self

    @property
    def reduces_resolution(self) -> bool:
        return self.kind in (BlockKind.CONV, BlockKind.MAXPOOL) and (self.stride or 1) > 1


class StageSpec(_Strict):
    blocks: List[BlockSpec] = Field(min_length=1)
    output_channels: int
    downsample: bool = False
    tap_block: Optional[int] = None

    @model_validator(mode="after")
    def _check_stage(self) -> "StageSpec":
        convs = [blk for blk in self.blocks if blk.kind == BlockKind.CONV]
        if not convs:
            raise ValueError("a stage needs at least one conv block")
        if convs[-1].out_channels != self.output_channels:
            raise ValueError(
                f"output_channels={self.output_channels} but last conv emits {convs[-1].out_channels}"
            )
        if self.output_channels < 2:
            raise ValueError(f"stage output needs >= 2 channels, got {self.output_channels}")
        if self.downsample != any(blk.reduces_resolution for blk in self.blocks):
            raise ValueError("downsample flag disagrees with block strides")
        if self.tap_block is not None and not 0 <= self.tap_block < len(self.blocks):
            raise ValueError(f"tap_block {self.tap_block} outside 0..{len(self.blocks) - 1}")
        return self

    @property
    def tap_index(self) -> int:
        return len(self.blocks) - 1 if self.tap_block is None else self.tap_block

    @property
    def tap_channels(self) -> int:
        channels = None
        for blk in self.blocks[: self.tap_index + 1]:
            if blk.kind == BlockKind.CONV:
                channels = blk.out_channels
        return channels


class ClassifierSpec(_Strict):
    hidden: int = Field(default=0, ge=0)
    classes: int = Field(ge=2)


class ModelSpec(_Strict):
    name: str = "custom"
    input_shape: Tuple[int, int, int]
    stages: List[StageSpec]
    classifier: ClassifierSpec
    tap_points: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check_model(self) -> "ModelSpec":
        if len(self.stages) < 2:
            raise ValueError(f"a model needs at least 2 stages, got {len(self.stages)}")
        if any(extent < 1 for extent in self.input_shape):
            raise ValueError(f"invalid input_shape {self.input_shape}")
        for index, stage in enumerate(self.stages):
            if stage.tap_channels is None or stage.tap_channels < 2:
                raise ValueError(f"stage {index} taps fewer than 2 channels")
        if self.tap_points is not None:
            unknown = set(self.tap_points) - set(self.stage_ids)
            if unknown:
                raise ValueError(f"tap_points {sorted(unknown)} are not stage indices")
            self.tap_points = sorted(set(self.tap_points))
        return self

    @property
    def stage_ids(self) -> List[int]:
        return list(range(len(self.stages)))

    @property
    def declared_taps(self) -> List[int]:
        return self.stage_ids if self.tap_points is None else list(self.tap_points)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> bytes:
        """SHA-256 of the canonical JSON form (32 bytes)."""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).digest()


# Training run
class TrainConfig(_Strict):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lambda_: float = Field(default=1.0, ge=0.0, alias="lambda")
    tap_stages: Optional[List[int]] = None
    epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=128, ge=1)
    lr_initial: float = Field(default=0.1, gt=0.0)
    lr_drop_epochs: List[int] = Field(default_factory=lambda: [30, 60, 90])
    lr_drop_factor: float = Field(default=0.1, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, le=1.0)
    weight_decay: float = Field(default=5e-4, ge=0.0)
    seed: int = Field(default=0, ge=0)
    precision: Literal["f64", "f32"] = "f64"

    @field_validator("tap_stages")
    @classmethod
    def _unique_taps(cls, v: Optional[List[int]]) -> Optional[List[int]]:
        if v is None:
            return v
        if len(set(v)) != len(v):
            raise ValueError(f"tap_stages has duplicates: {v}")
        if any(s < 0 for s in v):
            raise ValueError(f"tap_stages must be >= 0: {v}")
        return sorted(v)

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        drops = self.lr_drop_epochs
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ValueError(f"lr_drop_epochs must be strictly increasing: {drops}")
        if drops and (drops[0] < 0 or drops[-1] >= self.epochs):
            raise ValueError(f"lr_drop_epochs must lie in [0, epochs={self.epochs}): {drops}")
        if self.lambda_ > 0 and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when lambda > 0")
        if self.lambda_ > 0 and self.tap_stages == []:
            raise ValueError("tap_stages is empty but lambda > 0")
        return self


class MetricsRecord(_Strict):
    epoch: int = Field(ge=0)
    split: Literal["train", "test"]
    softmax_loss: float
    mfd_loss_per_stage: Dict[int, float] = Field(default_factory=dict)
    total_loss: float
    accuracy: float = Field(ge=0.0, le=1.0)
    mean_abs_corr_per_stage: Dict[int, float] = Field(default_factory=dict)
    wall_seconds: float = Field(default=0.0, ge=0.0)


# Data pipeline
class AugmentationPolicy(_Strict):
    enabled: bool = True
    pad_pixels: int = Field(default=4, ge=0)
    crop_to: Optional[Tuple[int, int]] = None
    hflip_probability: float = Field(default=0.5, ge=0.0, le=1.0)
    fill_mode: Literal["reflect", "zero"] = "reflect"

    def crop_shape(self, height: int, width: int) -> Tuple[int, int]:
        return self.crop_to if self.crop_to is not None else (height, width)


class DatasetSelection(_Strict):
    name: DatasetName = DatasetName.SYNTHETIC
    classes: int = Field(default=4, ge=2)
    per_class: int = Field(default=100, ge=1)
    test_per_class: int = Field(default=50, ge=1)
    synthetic_seed: int = 7
    train_subset: Optional[int] = Field(default=None, ge=1)
    test_subset: Optional[int] = Field(default=None, ge=1)
    data_dir: Optional[str] = None


class ExperimentConfig(_Strict):
    model: str = "mini3"
    dataset: DatasetSelection = Field(default_factory=DatasetSelection)
    train: TrainConfig = Field(default_factory=TrainConfig)
    augmentation: AugmentationPolicy = Field(default_factory=AugmentationPolicy)
    output_dir: str = "runs/experiment"
    repeats: int = Field(default=1, ge=1)
    eval_batch_size: int = Field(default=256, ge=1)

