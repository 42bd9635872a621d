"""
Tests for the assembled audiovisual model
"""
import numpy as np
import pytest

from mmadfer.config import ModelConfig
from mmadfer.data_io import write_weights
from mmadfer.errors import ConfigurationError
from mmadfer.metrics import count_trainable_params
from mmadfer.model import Batch, build_model
from mmadfer.tensor import ComputationTrace, backward
from mmadfer.functional import cross_entropy
from tests.conftest import TINY_MODEL, random_batch


def test_forward_shape(tiny_cfg):
    model = build_model(tiny_cfg, seed=1)
    logits = model(random_batch(tiny_cfg, 3))
    assert logits.shape == (3, tiny_cfg.num_classes)
    assert np.all(np.isfinite(logits.numpy()))


def test_closed_gates_match_fusion_free_pipeline(tiny_cfg):
    """With M=0 and alpha=0 every fusion block is an exact identity on 16 samples"""
    fused_cfg = tiny_cfg.with_prompt_hooks(0)
    plain_cfg = ModelConfig.model_validate({**fused_cfg.model_dump(), "fusion_variant": "none"})
    batch = random_batch(tiny_cfg, 16, seed=5)
    fused = build_model(fused_cfg, seed=1)(batch).numpy()
    plain = build_model(plain_cfg, seed=1)(batch).numpy()
    assert np.array_equal(fused, plain), "closed gates must reproduce the frozen pipeline bit for bit"


def test_same_seed_same_logits(tiny_cfg):
    batch = random_batch(tiny_cfg, 2)
    a = build_model(tiny_cfg, seed=4)(batch).numpy()
    b = build_model(tiny_cfg, seed=4)(batch).numpy()
    assert np.array_equal(a, b)


def test_training_seed_does_not_move_the_backbone(tiny_cfg):
    a, b = build_model(tiny_cfg, seed=1), build_model(tiny_cfg, seed=2)
    assert np.array_equal(a.vision.blocks[0].attn.query.weight.data, b.vision.blocks[0].attn.query.weight.data)
    assert not np.array_equal(a.head.jam.weight.data, b.head.jam.weight.data)


def test_videos_are_independent_of_batch_composition(tiny_cfg, float64):
    """Logits of a video do not depend on the other videos in its batch"""
    model = build_model(tiny_cfg, seed=1)
    for fusion in model.fusion:
        fusion.alpha.data = np.array(0.5)
    batch = random_batch(tiny_cfg, 3, seed=7)
    together = model(batch).numpy()
    for i in range(3):
        single = Batch(batch.video[i:i + 1], batch.audio[i:i + 1], batch.labels[i:i + 1])
        assert np.allclose(model(single).numpy()[0], together[i], atol=1e-9), f"video {i} changed with batching"


def test_only_adaptation_parameters_train(tiny_cfg):
    model = build_model(tiny_cfg, seed=1)
    trainable = {p.name for p in model.trainable_parameters()}
    assert {"vision.pos_embed", "audio.pos_embed", "fusion.0.alpha", "head.classifier.weight"} <= trainable
    encoder_trainable = {name for name in trainable if name.startswith(("vision.", "audio."))}
    assert encoder_trainable == {"vision.pos_embed", "audio.pos_embed"}, "encoder weights stay frozen"


def test_parameter_groups_add_up(tiny_cfg):
    model = build_model(tiny_cfg, seed=1)
    breakdown = count_trainable_params(model)
    assert breakdown.total == sum(breakdown.groups.values())
    assert breakdown.groups["prompts"] == 2 * 2 * tiny_cfg.num_prompts * tiny_cfg.dim, "base plus slices, two banks"
    assert breakdown.groups["ita"] == 0
    assert breakdown.total == sum(p.size for p in model.trainable_parameters())


def test_gradients_reach_every_trainable_parameter(tiny_cfg):
    model = build_model(tiny_cfg, seed=1)
    for fusion in model.fusion:
        fusion.alpha.data = np.array(0.3)
    batch = random_batch(tiny_cfg, 2)
    with ComputationTrace() as trace:
        loss = cross_entropy(model(batch), batch.labels)
    backward(trace, loss)
    missing = [p.name for p in model.trainable_parameters() if p.grad is None]
    assert not missing, f"no gradient for {missing}"
    assert all(p.grad is None for p in model.frozen_parameters())


@pytest.mark.parametrize("variant", ["add", "mult", "mult_concat"])
def test_fusion_variants_run(tiny_cfg, variant):
    cfg = ModelConfig.model_validate({**tiny_cfg.model_dump(), "fusion_variant": variant})
    assert build_model(cfg)(random_batch(cfg, 2)).shape == (2, cfg.num_classes)


@pytest.mark.parametrize("ita_dim", [4, 8])
def test_temporal_adaptors_run(tiny_cfg, ita_dim):
    """ita_dim equal to the bottleneck width runs inside the block, otherwise standalone"""
    cfg = ModelConfig.model_validate({**tiny_cfg.model_dump(), "ita_dim": ita_dim, "use_mtt": False})
    model = build_model(cfg)
    assert cfg.ita_inside_bottleneck == (ita_dim == cfg.latent_dim)
    assert bool(model.ita) != cfg.ita_inside_bottleneck
    assert count_trainable_params(model).groups["ita"] > 0
    assert count_trainable_params(model).groups["mtt"] == 0
    assert model(random_batch(cfg, 2)).shape == (2, cfg.num_classes)


@pytest.mark.parametrize("modality", ["audio", "vision"])
def test_unimodal_probe(tiny_cfg, modality):
    cfg = tiny_cfg.unimodal(modality)
    model = build_model(cfg)
    trainable = {p.name for p in model.trainable_parameters()}
    assert trainable == {"head.classifier.weight", "head.classifier.bias"}, "only the linear probe trains"
    assert model(random_batch(cfg, 2)).shape == (2, cfg.num_classes)


def test_wrong_frame_count_is_rejected(tiny_cfg):
    model = build_model(tiny_cfg)
    with pytest.raises(ConfigurationError):
        model(random_batch(tiny_cfg, 1, frames=tiny_cfg.num_frames + 1))


def test_prompt_hooks_can_be_spread():
    cfg = ModelConfig(**{**TINY_MODEL, "depth": 12, "num_prompts": 6}).with_prompt_hooks(4)
    assert cfg.prompt_hook_layers == [1, 4, 7, 10]
    assert cfg.num_prompts == 8, "M rises to the next multiple of the hook count"


def test_encoder_weights_are_loaded_from_config(tiny_cfg, tmp_path):
    query = np.full((tiny_cfg.dim, tiny_cfg.dim), 0.01, dtype=np.float32)
    write_weights(tmp_path / "audio.mmaw", {"blocks.1.attn.query.weight": query})
    cfg = ModelConfig.model_validate({**tiny_cfg.model_dump(), "audio_weights": tmp_path / "audio.mmaw"})
    model = build_model(cfg)
    assert np.array_equal(model.audio.blocks[1].attn.query.weight.data, query)
    assert not model.audio.blocks[1].attn.query.weight.trainable
    baseline = build_model(tiny_cfg)
    assert np.array_equal(model.vision.blocks[1].attn.query.weight.data,
                          baseline.vision.blocks[1].attn.query.weight.data)


def test_static_prompts_without_hooks(tiny_cfg):
    cfg = ModelConfig.model_validate({**tiny_cfg.model_dump(), "prompt_hook_layers": []})
    model = build_model(cfg)
    assert model.vision_prompts.num_prompts == cfg.num_prompts
    assert count_trainable_params(model).groups["prompts"] == 2 * cfg.num_prompts * cfg.dim
    assert model(random_batch(cfg, 2)).shape == (2, cfg.num_classes)
