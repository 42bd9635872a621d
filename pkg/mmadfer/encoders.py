"""
ViT-style unimodal encoders for video frames and audio spectrograms.

Both encoders are frozen apart from their positional embeddings. The model
drives them layer by layer so prompt and fusion hooks can run between blocks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError
from .nn import TOKEN_INIT_STD, LayerNorm, Linear, Module, TransformerBlock
from .tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

POS_GRID_KEY = "pos_embed_grid"


@dataclass(frozen=True)
class EncoderConfig:
    """Geometry of one encoder; ``grid`` is (rows, cols) of patches"""
    modality: Literal["vision", "audio"]
    depth: int
    dim: int
    heads: int
    mlp_ratio: int
    patch_size: int
    grid: tuple[int, int]
    in_channels: int
    prompt_hook_layers: tuple[int, ...] = field(default_factory=tuple)
    fusion_hook_layers: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigurationError(f"Encoder dim {self.dim} is not divisible by {self.heads} heads")
        for label, hooks in (("prompt", self.prompt_hook_layers), ("fusion", self.fusion_hook_layers)):
            bad = [h for h in hooks if not 1 <= h <= self.depth]
            if bad:
                raise ConfigurationError(f"{label} hook layers {bad} lie outside [1, {self.depth}]")

    @property
    def num_patches(self) -> int:
        return self.grid[0] * self.grid[1]


# ============= PATCHING =============

def patchify(inputs: np.ndarray, patch_size: int) -> np.ndarray:
    """
    Split (N, C, H, W) into (N, rows*cols, C*ps*ps) non-overlapping patches,
    row-major over the patch grid.

    Raises:
        ConfigurationError: If H or W is not divisible by the patch size
    """
    n, c, h, w = inputs.shape
    if h % patch_size or w % patch_size:
        raise ConfigurationError(f"Input extents {h}x{w} are not divisible by patch size {patch_size}")
    rows, cols = h // patch_size, w // patch_size
    patches = inputs.reshape(n, c, rows, patch_size, cols, patch_size)
    patches = patches.transpose(0, 2, 4, 1, 3, 5)
    return patches.reshape(n, rows * cols, c * patch_size * patch_size)


def unpatchify(patches: np.ndarray, grid: tuple[int, int], patch_size: int, channels: int) -> np.ndarray:
    """Inverse of ``patchify``"""
    n = patches.shape[0]
    rows, cols = grid
    out = patches.reshape(n, rows, cols, channels, patch_size, patch_size)
    return out.transpose(0, 3, 1, 4, 2, 5).reshape(n, channels, rows * patch_size, cols * patch_size)


def patch_index_map(height: int, width: int, patch_size: int) -> np.ndarray:
    """(H, W) map from every input cell to the index of the patch holding it"""
    index = np.arange((height // patch_size) * (width // patch_size), dtype=np.float64)
    patches = np.repeat(index[None, :, None], patch_size * patch_size, axis=2)
    return unpatchify(patches, (height // patch_size, width // patch_size), patch_size, 1)[0, 0].astype(np.int64)


# ============= POSITIONAL EMBEDDINGS =============

def interpolate_pos_embed(pos: np.ndarray, new_grid: tuple[int, int]) -> np.ndarray:
    """
    Bilinear resize of a (g1, g2, d) positional grid to (g1', g2', d).

    Grid corners map onto grid corners, so a 2x2 grid resized to 3x3 puts
    the mean of the four corners at the center.
    """
    g1, g2, d = pos.shape
    n1, n2 = new_grid
    if min(g1, g2, n1, n2) < 1:
        raise DimensionError(f"Cannot interpolate grid {(g1, g2)} to {tuple(new_grid)}")
    if (g1, g2) == (n1, n2):
        return np.array(pos)

    values = np.asarray(pos, dtype=np.float64)
    # a single row/column is constant along that axis
    if g1 == 1:
        values, g1 = np.repeat(values, 2, axis=0), 2
    if g2 == 1:
        values, g2 = np.repeat(values, 2, axis=1), 2
    interpolator = RegularGridInterpolator((np.linspace(0.0, 1.0, g1), np.linspace(0.0, 1.0, g2)), values,
                                           method="linear")
    rows, cols = np.meshgrid(np.linspace(0.0, 1.0, n1), np.linspace(0.0, 1.0, n2), indexing="ij")
    points = np.stack([rows.ravel(), cols.ravel()], axis=-1)
    return interpolator(points).reshape(n1, n2, d).astype(pos.dtype)


def resize_pos_table(table: np.ndarray, old_grid: tuple[int, int], new_grid: tuple[int, int]) -> np.ndarray:
    """Resize a (1 + g1*g2, d) table; row 0 (CLS) passes through untouched"""
    cls_row, grid = table[:1], table[1:].reshape(old_grid[0], old_grid[1], -1)
    resized = interpolate_pos_embed(grid, new_grid).reshape(new_grid[0] * new_grid[1], -1)
    return np.concatenate([cls_row, resized], axis=0)


# ============= ENCODER =============

class Encoder(Module):
    """
    Patch embedding, CLS token, positional embeddings, ``depth`` pre-norm
    blocks and a final norm. Only the positional embeddings are trainable.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.config = cfg
        patch_dim = cfg.in_channels * cfg.patch_size * cfg.patch_size
        self.patch_embed = Linear(patch_dim, cfg.dim, rng, trainable=False)
        self.cls_token = Parameter.normal((1, cfg.dim), TOKEN_INIT_STD, rng, trainable=False)
        self.pos_embed = Parameter.normal((1 + cfg.num_patches, cfg.dim), TOKEN_INIT_STD, rng, trainable=True)
        self.blocks = [
            TransformerBlock(cfg.dim, cfg.heads, rng, mlp_hidden=cfg.dim * cfg.mlp_ratio, trainable=False)
            for _ in range(cfg.depth)
        ]
        self.norm = LayerNorm(cfg.dim, trainable=False)

    @property
    def depth(self) -> int:
        return self.config.depth

    def embed(self, inputs: np.ndarray) -> Tensor:
        """
        Tokens (N, 1 + N_patches, d) for channels-first inputs (N, C, H, W).

        Raises:
            ConfigurationError: If the input grid does not match this encoder
        """
        cfg = self.config
        if inputs.ndim != 4 or inputs.shape[1] != cfg.in_channels:
            raise ConfigurationError(
                f"{cfg.modality} encoder expects (N, {cfg.in_channels}, H, W) inputs, got {inputs.shape}"
            )
        patches = patchify(np.asarray(inputs), cfg.patch_size)
        grid = (inputs.shape[2] // cfg.patch_size, inputs.shape[3] // cfg.patch_size)
        if grid != cfg.grid:
            raise ConfigurationError(f"{cfg.modality} input grid {grid} does not match encoder grid {cfg.grid}")

        n = patches.shape[0]
        tokens = self.patch_embed(T.as_tensor(patches))
        cls = T.broadcast_to(self.cls_token.reshape(1, 1, cfg.dim), (n, 1, cfg.dim))
        return T.concat([cls, tokens], axis=1) + self.pos_embed

    def block(self, tokens: Tensor, layer: int) -> Tensor:
        if not 1 <= layer <= self.depth:
            raise ContractError(f"Layer {layer} is outside [1, {self.depth}]")
        return self.blocks[layer - 1](tokens)

    def final_norm(self, tokens: Tensor) -> Tensor:
        return self.norm(tokens)

    def forward(self, inputs: np.ndarray) -> Tensor:
        """Hook-free pass through every block and the final norm"""
        tokens = self.embed(inputs)
        for layer in range(1, self.depth + 1):
            tokens = self.block(tokens, layer)
        return self.final_norm(tokens)

    def save_weights(self, path: Path) -> None:
        """Write every parameter plus the patch grid of the positional table to a ``.mmaw`` container"""
        from .data_io import write_weights

        state = self.state_dict()
        state[POS_GRID_KEY] = np.asarray(self.config.grid, dtype=np.float32)
        write_weights(path, state)

    def load_weights(self, path: Path, prefix: str = "", source_grid: tuple[int, int] | None = None) -> list[str]:
        """
        Load a ``.mmaw`` container by parameter path.

        Positional tables recorded for another grid are interpolated to this
        encoder's grid. The source grid is ``source_grid`` if given, else the
        ``pos_embed_grid`` entry of the container, else a square grid.

        Raises:
            DimensionError: If the positional table does not fit the source grid
        """
        from .data_io import read_weights

        state = {name[len(prefix):]: value for name, value in read_weights(path).items() if name.startswith(prefix)}
        recorded = state.pop(POS_GRID_KEY, None)
        pos = state.get("pos_embed")
        expected = (1 + self.config.num_patches, self.config.dim)
        if pos is not None and pos.shape != expected:
            if source_grid is None and recorded is not None:
                source_grid = (int(recorded[0]), int(recorded[1]))
            if source_grid is None:
                side = int(round(np.sqrt(pos.shape[0] - 1)))
                source_grid = (side, side)
            source_grid = tuple(source_grid)
            if source_grid[0] * source_grid[1] != pos.shape[0] - 1:
                raise DimensionError(f"Positional table {pos.shape} does not fit a {source_grid} grid")
            state["pos_embed"] = resize_pos_table(pos, source_grid, self.config.grid)
            logger.info(f"📐 Interpolated {self.config.modality} positional embeddings "
                        f"{source_grid} -> {self.config.grid}")
        loaded = self.load_state_dict(state, strict=False)
        logger.info(f"Loaded {len(loaded)} tensors into the {self.config.modality} encoder from {path}")
        return loaded


# ============= OPERATIONS =============

def patch_embed_vision(frames: np.ndarray, encoder: Encoder) -> Tensor:
    """Frames (N, C, H, W) -> tokens (N, 1 + N_v, d)"""
    return encoder.embed(frames)


def patch_embed_audio(spec: np.ndarray, encoder: Encoder) -> Tensor:
    """Spectrograms (N, F, T) -> tokens (N, 1 + N_a, d)"""
    spec = np.asarray(spec)
    if spec.ndim != 3:
        raise ConfigurationError(f"Spectrograms must be (N, F, T), got {spec.shape}")
    return encoder.embed(spec[:, None])


def encoder_block_forward(tokens: Tensor, layer: int, encoder: Encoder) -> Tensor:
    return encoder.block(tokens, layer)


def check_depth_equality(vision: Encoder, audio: Encoder) -> None:
    if vision.depth != audio.depth:
        raise ConfigurationError(
            f"Encoders must share depth for layer-aligned hooks: vision={vision.depth}, audio={audio.depth}"
        )
