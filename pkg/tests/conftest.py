"""
Shared fixtures: a tiny model geometry, a tiny synthetic dataset and
helpers to build random batches.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from mmadfer.config import ExperimentConfig, ModelConfig, SynthConfig
from mmadfer.data_io import generate_synthetic
from mmadfer.model import Batch
from mmadfer.tensor import precision

GOLDEN_DIR = Path(__file__).parent / "golden"

TINY_MODEL = dict(
    dim=16,
    depth=2,
    heads=2,
    mlp_ratio=2,
    patch_size=8,
    image_size=(16, 16),
    spec_size=(16, 16),
    num_frames=2,
    num_classes=3,
    num_prompts=2,
    prompt_hook_layers=[1, 2],
    latent_dim=8,
    temporal_dim=8,
    temporal_heads=2,
)

TINY_SYNTH = dict(
    num_classes=3,
    samples=15,
    total_frames=2,
    frame_size=(16, 16),
    spec_size=(16, 16),
    noise=0.1,
    smoothing=1.0,
    seed=3,
)


@pytest.fixture
def float64():
    with precision("float64"):
        yield


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(**TINY_MODEL)


@pytest.fixture
def tiny_dataset_dir(tmp_path) -> Path:
    out = tmp_path / "dataset"
    generate_synthetic(SynthConfig(**TINY_SYNTH), out)
    return out


@pytest.fixture
def tiny_experiment(tiny_dataset_dir) -> ExperimentConfig:
    return ExperimentConfig(
        name="tiny",
        model=ModelConfig(**TINY_MODEL),
        schedule={"base_lr": 1e-3, "epochs": 2, "batch_size": 4},
        data={"dataset_dir": tiny_dataset_dir, "fold": 1},
        seed=1,
    )


@pytest.fixture
def tiny_config_file(tmp_path, tiny_experiment) -> Path:
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_experiment.model_dump(mode="json")), encoding="utf-8")
    return path


def random_batch(cfg: ModelConfig, videos: int, seed: int = 0, frames: int | None = None) -> Batch:
    """Gaussian frames and spectrograms in the model's geometry"""
    rng = np.random.default_rng(seed)
    frames = cfg.num_frames if frames is None else frames
    return Batch(
        video=rng.normal(size=(videos, frames, cfg.channels, *cfg.image_size)),
        audio=rng.normal(size=(videos, *cfg.spec_size)),
        labels=rng.integers(0, cfg.num_classes, size=videos),
        ids=[f"v{i}" for i in range(videos)],
    )
