"""
The full audiovisual model: two frozen encoders driven layer by layer with
prompt hooks, fusion blocks and optional temporal adaptors, followed by
the temporal head.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .encoders import EncoderConfig, Encoder, check_depth_equality, patch_embed_audio, patch_embed_vision
from .errors import ConfigurationError
from .fusion import build_fusion_block
from .nn import Linear, Module
from .prompts import PromptBank, PromptPass, inject_prompts, strip_prompts
from .temporal import LatentTemporalAdaptor, TemporalAdaptor, TemporalHead, assemble_temporal
from .tensor import Tensor

logger = logging.getLogger(__name__)

# sub-seeds for default_rng([seed, component]); fixed so that a component's
# initial weights never depend on which other components exist
VISION, AUDIO, VISION_PROMPTS, AUDIO_PROMPTS, FUSION, ITA, HEAD = range(7)


@dataclass
class Batch:
    """Model inputs for B videos: frames (B, t, C, H, W), spectrograms (B, F, T)"""
    video: np.ndarray
    audio: np.ndarray
    labels: np.ndarray
    ids: Sequence[str] = ()

    def __len__(self) -> int:
        return int(self.video.shape[0])


def _rng(seed: int, component: int) -> np.random.Generator:
    return np.random.default_rng([seed, component])


class LinearProbe(Module):
    """Classifier on the CLS token of a single frozen branch"""

    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator):
        self.classifier = Linear(dim, num_classes, rng)

    def __call__(self, features: Tensor) -> Tensor:
        return self.classifier(features)


class MMAModel(Module):
    """
    Frozen vision/audio encoders with trainable positional embeddings,
    prompts, fusion blocks, adaptors and a temporal head.

    Parameter paths: ``vision.*``, ``audio.*``, ``vision_prompts.*``,
    ``audio_prompts.*``, ``fusion.{i}.*``, ``ita.{i}.*``, ``head.*``.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 1):
        self.config = cfg
        multimodal = cfg.modality == "multimodal"
        fusion_layers = cfg.resolved_fusion_layers()
        self._fusion_slot = {layer: i for i, layer in enumerate(fusion_layers)}

        self.vision = None
        self.audio = None
        if cfg.modality in ("multimodal", "vision"):
            self.vision = Encoder(self._encoder_config("vision", fusion_layers), _rng(cfg.backbone_seed, VISION))
        if cfg.modality in ("multimodal", "audio"):
            self.audio = Encoder(self._encoder_config("audio", fusion_layers), _rng(cfg.backbone_seed, AUDIO))
        if multimodal:
            check_depth_equality(self.vision, self.audio)
        for encoder, weights in ((self.vision, cfg.vision_weights), (self.audio, cfg.audio_weights)):
            if encoder is not None and weights is not None:
                encoder.load_weights(weights)

        self.vision_prompts = None
        self.audio_prompts = None
        if cfg.num_prompts:
            self.vision_prompts = PromptBank(cfg.num_prompts, cfg.dim, cfg.prompt_hook_layers,
                                             _rng(seed, VISION_PROMPTS))
            self.audio_prompts = PromptBank(cfg.num_prompts, cfg.dim, cfg.prompt_hook_layers,
                                            _rng(seed, AUDIO_PROMPTS))

        fusion_rng, ita_rng = _rng(seed, FUSION), _rng(seed, ITA)
        self.fusion = []
        self.ita = []
        for _ in fusion_layers:
            latent = LatentTemporalAdaptor(cfg.latent_dim, ita_rng) if cfg.ita_inside_bottleneck else None
            self.fusion.append(build_fusion_block(cfg.fusion_variant, cfg.dim, cfg.latent_dim, fusion_rng, latent))
            if cfg.ita_dim is not None and not cfg.ita_inside_bottleneck:
                self.ita.append(TemporalAdaptor(cfg.dim, cfg.ita_dim, ita_rng))

        if multimodal:
            self.head = TemporalHead(cfg.dim, cfg.temporal_dim, cfg.num_frames, cfg.num_classes, _rng(seed, HEAD),
                                     heads=cfg.temporal_heads, mlp_ratio=cfg.temporal_mlp_ratio,
                                     use_mtt=cfg.use_mtt)
        else:
            self.head = LinearProbe(cfg.dim, cfg.num_classes, _rng(seed, HEAD))
            branch = self.vision if cfg.modality == "vision" else self.audio
            branch.pos_embed.trainable = False

        self.assign_names()
        logger.info(f"🧩 Built {cfg.modality} model: {cfg.fusion_variant} fusion, "
                    f"{len(fusion_layers)} fusion blocks, {cfg.num_prompts} prompts, "
                    f"{sum(p.size for p in self.trainable_parameters()):,} trainable parameters")

    def _encoder_config(self, modality: str, fusion_layers: list[int]) -> EncoderConfig:
        cfg = self.config
        return EncoderConfig(
            modality=modality,
            depth=cfg.depth,
            dim=cfg.dim,
            heads=cfg.heads,
            mlp_ratio=cfg.mlp_ratio,
            patch_size=cfg.patch_size,
            grid=cfg.vision_grid if modality == "vision" else cfg.audio_grid,
            in_channels=cfg.channels if modality == "vision" else 1,
            prompt_hook_layers=tuple(cfg.prompt_hook_layers),
            fusion_hook_layers=tuple(fusion_layers),
        )

    # ============= FORWARD =============

    def _pool_window(self, num_prompts: int) -> slice:
        cfg = self.config
        start = 0 if cfg.fusion_pool_cls else 1
        stop = None if cfg.fusion_pool_prompts or not num_prompts else -num_prompts
        return slice(start, stop)

    def _check_batch(self, batch: Batch) -> None:
        cfg = self.config
        video, audio = batch.video, batch.audio
        if self.vision is not None:
            if video.ndim != 5 or video.shape[1] != cfg.num_frames:
                raise ConfigurationError(
                    f"Video batch must be (B, {cfg.num_frames}, C, H, W), got {video.shape}"
                )
        if self.audio is not None and audio.ndim != 3:
            raise ConfigurationError(f"Audio batch must be (B, F, T), got {audio.shape}")

    def __call__(self, batch: Batch) -> Tensor:
        return mma_forward(batch, self)

    def forward_unimodal(self, batch: Batch) -> Tensor:
        cfg = self.config
        if cfg.modality == "vision":
            b, t = batch.video.shape[:2]
            tokens = self.vision.forward(batch.video.reshape(b * t, *batch.video.shape[2:]))
            features = tokens[:, 0, :].reshape(b, t, cfg.dim).mean(axis=1)
        else:
            tokens = self.audio.forward(np.asarray(batch.audio)[:, None])
            features = tokens[:, 0, :]
        return self.head(features)


def mma_forward(batch: Batch, model: MMAModel) -> Tensor:
    """
    Logits (B, num_classes) for a batch.

    Frames of all videos are processed as one (B*t) batch; at every layer
    both encoders run their block, then the prompt hook (if any), then the
    fusion block and adaptor (if any) on per-video views of the frames.
    """
    model._check_batch(batch)
    cfg = model.config
    if cfg.modality != "multimodal":
        return model.forward_unimodal(batch)

    videos, frames = batch.video.shape[:2]
    v = patch_embed_vision(batch.video.reshape(videos * frames, *batch.video.shape[2:]), model.vision)
    a = patch_embed_audio(batch.audio, model.audio)

    v = inject_prompts(v, model.vision_prompts)
    a = inject_prompts(a, model.audio_prompts)
    vision_pass, audio_pass = PromptPass(model.vision_prompts), PromptPass(model.audio_prompts)
    window = model._pool_window(cfg.num_prompts)
    tokens_per_frame = v.shape[1]

    for layer in range(1, cfg.depth + 1):
        v = model.vision.block(v, layer)
        a = model.audio.block(a, layer)
        v = vision_pass.apply(v, layer)
        a = audio_pass.apply(a, layer)

        slot = model._fusion_slot.get(layer)
        if slot is not None:
            per_video = v.reshape(videos, frames, tokens_per_frame, cfg.dim)
            per_video, a = model.fusion[slot](per_video, a, window, window)
            if model.ita:
                per_video = model.ita[slot](per_video)
            v = per_video.reshape(videos * frames, tokens_per_frame, cfg.dim)

    vision_pass.finish()
    audio_pass.finish()

    v = model.vision.final_norm(strip_prompts(v, cfg.num_prompts))
    a = model.audio.final_norm(strip_prompts(a, cfg.num_prompts))
    sequence = assemble_temporal(v, a[:, 0, :], frames)
    return model.head(sequence)


def build_model(cfg: ModelConfig, seed: int = 1) -> MMAModel:
    return MMAModel(cfg, seed=seed)
