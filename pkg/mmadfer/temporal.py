"""
Temporal stage: per-frame CLS assembly, the Joint Adaptation Module (JAM),
the Multimodal Temporal Transformer (MTT) head and the intermediate
temporal adaptors (ITA) used by the temporal ablation.
"""
from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError
from .nn import TOKEN_INIT_STD, Attention, LayerNorm, Linear, Module, TransformerBlock
from .tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

ITA_HEADS = 2


def assemble_temporal(frame_tokens: Tensor, audio_cls: Tensor | None, frames: int) -> Tensor:
    """
    Gather frame CLS rows into (B, t, d) and add each video's audio CLS to
    every frame position.

    Args:
        frame_tokens: (B*t, n, d), frames of one video contiguous
        audio_cls: (B, d) or None
        frames: t

    Raises:
        ContractError: If B*t is not divisible by t
    """
    total, _, dim = frame_tokens.shape
    if frames < 1 or total % frames:
        raise ContractError(f"{total} frames cannot be grouped into clips of {frames}")
    batch = total // frames
    sequence = frame_tokens[:, 0, :].reshape(batch, frames, dim)
    if audio_cls is None:
        return sequence
    if audio_cls.shape != (batch, dim):
        raise DimensionError(f"Audio CLS {audio_cls.shape} does not match {batch} videos of width {dim}")
    return sequence + audio_cls.reshape(batch, 1, dim)


# ============= HEAD =============

class TemporalHead(Module):
    """
    JAM followed either by the MTT (temporal embeddings, a fresh CLS, one
    block, a final norm) or by averaging over frames, then the classifier.
    """

    def __init__(self, dim: int, temporal_dim: int, frames: int, num_classes: int, rng: np.random.Generator,
                 heads: int = 8, mlp_ratio: int = 2, use_mtt: bool = True):
        if temporal_dim % heads:
            raise ConfigurationError(f"Temporal width {temporal_dim} is not divisible by {heads} heads")
        self.frames = frames
        self.use_mtt = use_mtt
        self.jam = Linear(dim, temporal_dim, rng)
        if use_mtt:
            self.temporal_embed = Parameter.zeros((frames, temporal_dim))
            self.cls_token = Parameter.normal((1, temporal_dim), TOKEN_INIT_STD, rng)
            self.block = TransformerBlock(temporal_dim, heads, rng, mlp_hidden=temporal_dim * mlp_ratio)
            self.norm = LayerNorm(temporal_dim)
        self.classifier = Linear(temporal_dim, num_classes, rng)

    def __call__(self, sequence: Tensor) -> Tensor:
        joint = jam_forward(sequence, self)
        if self.use_mtt:
            return mtt_forward(joint, self)
        return self.classifier(joint.mean(axis=1))


def jam_forward(sequence: Tensor, head: TemporalHead) -> Tensor:
    """(B, t, d) -> (B, t, d_t)"""
    return head.jam(sequence)


def mtt_forward(sequence: Tensor, head: TemporalHead) -> Tensor:
    """
    Temporal transformer over (B, t, d_t); classifies the output CLS.

    Raises:
        ConfigurationError: If t differs from the temporal embedding length
    """
    batch, frames, width = sequence.shape
    if frames != head.frames:
        raise ConfigurationError(f"Sequence has {frames} frames, temporal embeddings expect {head.frames}")
    x = sequence + head.temporal_embed
    cls = T.broadcast_to(head.cls_token.reshape(1, 1, width), (batch, 1, width))
    x = head.block(T.concat([cls, x], axis=1))
    return head.classifier(head.norm(x[:, 0, :]))


# ============= INTERMEDIATE TEMPORAL ADAPTORS =============

def _replace_cls(tokens: Tensor, cls_rows: Tensor) -> Tensor:
    """Write (B, t, w) rows back into position 0 of (B, t, n, w) tokens"""
    batch, frames, _, width = tokens.shape
    return T.concat([cls_rows.reshape(batch, frames, 1, width), tokens[:, :, 1:, :]], axis=2)


class TemporalAdaptor(Module):
    """
    Standalone adaptor after a fusion hook: frame CLS rows are projected to
    d_ita, normalized, attended over time, and the attention output (mapped
    back to d) is added to the CLS rows.
    """

    def __init__(self, dim: int, ita_dim: int, rng: np.random.Generator):
        self.down = Linear(dim, ita_dim, rng)
        self.norm = LayerNorm(ita_dim)
        self.attn = Attention(ita_dim, ita_dim, ITA_HEADS, rng, out_dim=dim)

    def __call__(self, tokens: Tensor) -> Tensor:
        cls_rows = tokens[:, :, 0, :]
        return _replace_cls(tokens, cls_rows + ita_forward(cls_rows, self))


class LatentTemporalAdaptor(Module):
    """Adaptor running inside a bottleneck block on latent frame CLS rows"""

    def __init__(self, latent_dim: int, rng: np.random.Generator):
        self.norm = LayerNorm(latent_dim)
        self.attn = Attention(latent_dim, latent_dim, ITA_HEADS, rng)

    def __call__(self, tokens: Tensor) -> Tensor:
        cls_rows = tokens[:, :, 0, :]
        return _replace_cls(tokens, cls_rows + self.attn(self.norm(cls_rows)))


def ita_forward(frame_cls: Tensor, params: TemporalAdaptor) -> Tensor:
    """Temporal self-attention over (B, t, d) frame CLS rows; returns the (B, t, d) enrichment"""
    return params.attn(params.norm(params.down(frame_cls)))
