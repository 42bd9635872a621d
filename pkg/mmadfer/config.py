"""
Experiment configuration models.

Every model rejects unknown keys; cross-field rules are model validators so
that a bad document fails with a field-level pydantic ValidationError.
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

PRESETS_DIR = Path(__file__).parent / "presets"

FusionVariant = Literal["none", "add", "mult", "mult_concat", "bottleneck"]
Modality = Literal["multimodal", "audio", "vision"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def spread_hook_layers(count: int, depth: int) -> list[int]:
    """Hooks spread evenly over the depth: layer 1 + i*depth/count"""
    if count < 0 or count > depth:
        raise ConfigurationError(f"Cannot place {count} hooks in {depth} layers")
    return [1 + (i * depth) // count for i in range(count)]


# ============= MODEL =============

class ModelConfig(_Strict):
    """Architecture of both encoders, the adaptation modules and the head"""

    dim: int = Field(default=32, ge=1, description="Encoder hidden size d")
    depth: int = Field(default=12, ge=1, description="Layers per encoder (shared)")
    heads: int = Field(default=4, ge=1)
    mlp_ratio: int = Field(default=4, ge=1)
    patch_size: int = Field(default=16, ge=1)
    channels: int = Field(default=3, ge=1)
    image_size: tuple[int, int] = (32, 32)
    spec_size: tuple[int, int] = Field(default=(32, 64), description="Mel bands x time frames")
    num_frames: int = Field(default=8, ge=1, description="Frames per clip t")
    num_classes: int = Field(default=7, ge=2)
    modality: Modality = "multimodal"

    num_prompts: int = Field(default=6, ge=0, description="Prompt tokens per modality M")
    prompt_hook_layers: list[int] = Field(default_factory=lambda: [1, 7])

    fusion_variant: FusionVariant = "bottleneck"
    fusion_layers: Optional[list[int]] = Field(default=None, description="None places a block after every layer")
    latent_dim: int = Field(default=16, ge=1, description="Bottleneck width d_b")
    fusion_pool_cls: bool = True
    fusion_pool_prompts: bool = True

    temporal_dim: int = Field(default=24, ge=1, description="JAM / MTT width d_t")
    temporal_heads: int = Field(default=4, ge=1)
    temporal_mlp_ratio: int = Field(default=2, ge=1)
    use_mtt: bool = True
    ita_dim: Optional[int] = Field(default=None, ge=1)

    backbone_seed: int = Field(default=0, ge=0, description="Seed of the frozen stand-in encoder weights")
    vision_weights: Optional[Path] = Field(default=None, description=".mmaw file loaded into the vision encoder")
    audio_weights: Optional[Path] = Field(default=None, description=".mmaw file loaded into the audio encoder")

    @model_validator(mode="after")
    def check_architecture(self) -> "ModelConfig":
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.temporal_dim % self.temporal_heads:
            raise ValueError(f"temporal_dim {self.temporal_dim} is not divisible by temporal_heads {self.temporal_heads}")
        for label, (rows, cols) in (("image_size", self.image_size), ("spec_size", self.spec_size)):
            if rows % self.patch_size or cols % self.patch_size or rows < 1 or cols < 1:
                raise ValueError(f"{label} {(rows, cols)} is not divisible by patch_size {self.patch_size}")

        hooks = self.prompt_hook_layers
        if any(not 1 <= h <= self.depth for h in hooks):
            raise ValueError(f"prompt_hook_layers {hooks} must lie in [1, {self.depth}]")
        if any(b <= a for a, b in zip(hooks, hooks[1:])):
            raise ValueError(f"prompt_hook_layers {hooks} must be strictly increasing")
        if hooks and self.num_prompts % len(hooks):
            raise ValueError(f"num_prompts {self.num_prompts} is not a multiple of {len(hooks)} hook layers")

        layers = self.resolved_fusion_layers()
        if any(not 1 <= l <= self.depth for l in layers):
            raise ValueError(f"fusion_layers {layers} must lie in [1, {self.depth}]")
        if any(b <= a for a, b in zip(layers, layers[1:])):
            raise ValueError(f"fusion_layers {layers} must be strictly increasing")
        if self.fusion_variant == "bottleneck" and self.latent_dim >= self.dim:
            raise ValueError(f"latent_dim {self.latent_dim} must be smaller than dim {self.dim}")
        if self.fusion_variant == "mult" and self.latent_dim % 2:
            raise ValueError("mult fusion uses 2 heads; latent_dim must be even")
        if self.fusion_variant == "mult_concat" and self.latent_dim % 2:
            raise ValueError("mult_concat fusion uses 2 heads; latent_dim must be even")

        if self.ita_dim is not None:
            if self.fusion_variant == "none" or not layers:
                raise ValueError("ita_dim needs fusion hooks to colocate with")
            if self.ita_dim % 2:
                raise ValueError("ITA uses 2 heads; ita_dim must be even")

        if self.modality != "multimodal":
            if self.fusion_variant != "none" or self.num_prompts or self.ita_dim is not None:
                raise ValueError(f"{self.modality}-only models carry no prompts, fusion or ITA")
        return self

    def resolved_fusion_layers(self) -> list[int]:
        if self.fusion_variant == "none":
            return []
        if self.fusion_layers is None:
            return list(range(1, self.depth + 1))
        return list(self.fusion_layers)

    @property
    def vision_grid(self) -> tuple[int, int]:
        return self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size

    @property
    def audio_grid(self) -> tuple[int, int]:
        return self.spec_size[0] // self.patch_size, self.spec_size[1] // self.patch_size

    @property
    def ita_inside_bottleneck(self) -> bool:
        return self.ita_dim is not None and self.fusion_variant == "bottleneck" and self.ita_dim == self.latent_dim

    def _updated(self, **changes) -> "ModelConfig":
        return ModelConfig.model_validate({**self.model_dump(), **changes})

    def with_prompt_hooks(self, count: int) -> "ModelConfig":
        """Copy with ``count`` evenly spread hooks; M is raised to the next multiple of ``count``"""
        if count == 0:
            return self._updated(num_prompts=0, prompt_hook_layers=[])
        prompts = -(-max(self.num_prompts, 1) // count) * count
        return self._updated(num_prompts=prompts, prompt_hook_layers=spread_hook_layers(count, self.depth))

    def unimodal(self, modality: Modality) -> "ModelConfig":
        return self._updated(modality=modality, fusion_variant="none", num_prompts=0,
                             prompt_hook_layers=[], ita_dim=None)


# ============= SCHEDULE / DATA =============

class ScheduleConfig(_Strict):
    base_lr: float = Field(default=1e-4, gt=0)
    epochs: int = Field(default=25, ge=1)
    batch_size: int = Field(default=8, ge=1)
    weight_decay: float = Field(default=1e-2, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)


class DataConfig(_Strict):
    dataset_dir: Optional[Path] = Field(default=None, description="Directory holding manifest.json")
    fold: int = Field(default=1, ge=1, le=5)


class SynthConfig(_Strict):
    """Geometry and noise of the synthetic cross-modal dataset"""

    num_classes: int = Field(default=7, ge=2)
    samples: int = Field(default=400, ge=1)
    total_frames: int = Field(default=32, ge=1)
    channels: int = Field(default=3, ge=1)
    frame_size: tuple[int, int] = (32, 32)
    spec_size: tuple[int, int] = (32, 64)
    noise: float = Field(default=0.5, ge=0)
    smoothing: float = Field(default=2.0, ge=0)
    modulation: float = Field(default=0.25, ge=0, lt=1)
    seed: int = Field(default=1, ge=0)

    @model_validator(mode="after")
    def check_geometry(self) -> "SynthConfig":
        if min(*self.frame_size, *self.spec_size) < 1:
            raise ValueError("frame_size and spec_size extents must be positive")
        return self


class ExperimentConfig(_Strict):
    """Everything one training run depends on, serialized as JSON"""

    name: str = Field(default="run", min_length=1, max_length=100, pattern=r"^[A-Za-z0-9_.-]+$")
    model: ModelConfig = Field(default_factory=ModelConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    seed: int = Field(default=1, ge=0)
    output_dir: Optional[Path] = None

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, independent of the output location"""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_experiment_config(path: Path) -> ExperimentConfig:
    """
    Read and validate an experiment JSON document.

    Raises:
        ConfigurationError: If the file is missing or not JSON
        pydantic.ValidationError: If a field is invalid
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Config file {path} is not valid JSON: {e}")
    return ExperimentConfig.model_validate(document)


def load_preset(name: str) -> ExperimentConfig:
    path = PRESETS_DIR / f"{name}.json"
    if not path.is_file():
        raise ConfigurationError(f"Unknown preset '{name}'")
    return load_experiment_config(path)


def format_validation_error(error: ValidationError) -> str:
    """One line per failing field: ``model.latent_dim: message``"""
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return "\n".join(lines)
