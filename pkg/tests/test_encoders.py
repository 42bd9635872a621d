"""
Tests for patching, positional interpolation and the frozen encoders
"""
import numpy as np
import pytest

from mmadfer.data_io import write_weights
from mmadfer.encoders import (Encoder, EncoderConfig, check_depth_equality, encoder_block_forward,
                              interpolate_pos_embed, patch_embed_audio, patch_embed_vision, patch_index_map,
                              patchify, resize_pos_table, unpatchify)
from mmadfer.errors import ConfigurationError, ContractError, DimensionError


def _encoder(modality="vision", grid=(2, 2), depth=2, dim=8, channels=3, patch=4, seed=0):
    cfg = EncoderConfig(modality=modality, depth=depth, dim=dim, heads=2, mlp_ratio=2, patch_size=patch,
                        grid=grid, in_channels=channels)
    return Encoder(cfg, np.random.default_rng(seed))


def test_patchify_round_trip_and_order():
    inputs = np.arange(2 * 3 * 8 * 12, dtype=np.float64).reshape(2, 3, 8, 12)
    patches = patchify(inputs, 4)
    assert patches.shape == (2, 6, 48)
    assert np.array_equal(patches[0, 1].reshape(3, 4, 4), inputs[0, :, 0:4, 4:8]), "patches are row-major"
    assert np.array_equal(unpatchify(patches, (2, 3), 4, 3), inputs)


def test_patchify_rejects_indivisible_extent():
    with pytest.raises(ConfigurationError):
        patchify(np.zeros((1, 1, 10, 8)), 4)


def test_patch_index_map_partitions_the_input():
    """Every cell belongs to exactly one patch and every patch has ps*ps cells"""
    index = patch_index_map(8, 12, 4)
    counts = np.bincount(index.ravel())
    assert counts.tolist() == [16] * 6
    assert index[0, 0] == 0 and index[0, 4] == 1 and index[4, 0] == 3 and index[7, 11] == 5


def test_interpolation_puts_corner_mean_at_center():
    pos = np.arange(2 * 2 * 3, dtype=np.float64).reshape(2, 2, 3)
    resized = interpolate_pos_embed(pos, (3, 3))
    assert np.allclose(resized[1, 1], pos.reshape(4, 3).mean(axis=0))
    assert np.allclose(resized[0, 0], pos[0, 0]) and np.allclose(resized[2, 2], pos[1, 1]), "corners are kept"


def test_interpolation_to_same_grid_is_identity():
    pos = np.random.default_rng(0).normal(size=(3, 4, 5))
    assert np.array_equal(interpolate_pos_embed(pos, (3, 4)), pos)


def test_interpolation_of_single_row():
    pos = np.array([[[1.0], [3.0]]])
    resized = interpolate_pos_embed(pos, (2, 3))
    assert np.allclose(resized[..., 0], [[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])


def test_resize_keeps_cls_row():
    table = np.random.default_rng(1).normal(size=(1 + 4, 6))
    resized = resize_pos_table(table, (2, 2), (3, 3))
    assert resized.shape == (10, 6)
    assert np.array_equal(resized[0], table[0])


def test_only_positional_embeddings_are_trainable():
    encoder = _encoder()
    encoder.assign_names()
    names = [p.name for p in encoder.trainable_parameters()]
    assert names == ["pos_embed"], f"unexpected trainable parameters {names}"


def test_embed_shapes_for_both_modalities():
    vision = _encoder("vision", grid=(2, 2))
    tokens = patch_embed_vision(np.zeros((5, 3, 8, 8)), vision)
    assert tokens.shape == (5, 5, 8), "CLS + 4 patches"

    audio = _encoder("audio", grid=(2, 4), channels=1)
    tokens = patch_embed_audio(np.zeros((2, 8, 16)), audio)
    assert tokens.shape == (2, 9, 8)


def test_embed_rejects_wrong_grid():
    with pytest.raises(ConfigurationError):
        patch_embed_vision(np.zeros((1, 3, 12, 8)), _encoder())


def test_block_index_is_checked():
    encoder = _encoder(depth=2)
    tokens = patch_embed_vision(np.zeros((1, 3, 8, 8)), encoder)
    assert encoder_block_forward(tokens, 2, encoder).shape == tokens.shape
    with pytest.raises(ContractError):
        encoder_block_forward(tokens, 0, encoder)
    with pytest.raises(ContractError):
        encoder_block_forward(tokens, 3, encoder)


def test_depth_mismatch_is_rejected():
    with pytest.raises(ConfigurationError):
        check_depth_equality(_encoder(depth=2), _encoder("audio", depth=3, channels=1))


def test_hook_outside_depth_is_rejected():
    with pytest.raises(ConfigurationError):
        EncoderConfig(modality="vision", depth=2, dim=8, heads=2, mlp_ratio=2, patch_size=4, grid=(2, 2),
                      in_channels=3, prompt_hook_layers=(3,))


def test_load_weights_interpolates_positional_grid(tmp_path):
    """A 2x2 positional table is resized to the encoder's 3x3 grid; other tensors load by path"""
    encoder = _encoder(grid=(3, 3))
    rng = np.random.default_rng(2)
    pos = rng.normal(size=(5, 8)).astype(np.float32)
    query = rng.normal(size=(8, 8)).astype(np.float32)
    path = tmp_path / "vision.mmaw"
    write_weights(path, {"pos_embed": pos, "blocks.0.attn.query.weight": query})

    loaded = encoder.load_weights(path)
    assert sorted(loaded) == ["blocks.0.attn.query.weight", "pos_embed"]
    assert encoder.pos_embed.shape == (10, 8)
    assert np.allclose(encoder.pos_embed.data[0], pos[0]), "CLS row passes through"
    assert np.allclose(encoder.pos_embed.data[5], pos[1:].mean(axis=0), atol=1e-6), "center is the corner mean"
    assert np.array_equal(encoder.blocks[0].attn.query.weight.data, query)


def test_saved_weights_record_a_rectangular_grid(tmp_path):
    """An audio table from a 2x4 grid is resized to 2x8 using the grid stored in the container"""
    source = _encoder("audio", grid=(2, 4), channels=1, seed=3)
    path = tmp_path / "audio.mmaw"
    source.save_weights(path)

    target = _encoder("audio", grid=(2, 8), channels=1, seed=4)
    loaded = target.load_weights(path)
    assert "pos_embed_grid" not in loaded
    expected = resize_pos_table(source.pos_embed.data, (2, 4), (2, 8))
    assert np.allclose(target.pos_embed.data, expected, atol=1e-6)
    assert np.array_equal(target.blocks[1].attn.query.weight.data, source.blocks[1].attn.query.weight.data)


def test_rectangular_grid_without_record(tmp_path):
    pos = np.random.default_rng(5).normal(size=(1 + 8, 8)).astype(np.float32)
    path = tmp_path / "audio.mmaw"
    write_weights(path, {"pos_embed": pos})
    target = _encoder("audio", grid=(2, 8), channels=1)
    with pytest.raises(DimensionError):
        target.load_weights(path)
    target.load_weights(path, source_grid=(2, 4))
    assert np.allclose(target.pos_embed.data, resize_pos_table(pos, (2, 4), (2, 8)), atol=1e-6)
