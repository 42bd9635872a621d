"""
Cross-modal fusion blocks exchanged between the vision and audio streams.

Vision tokens arrive per video as (B, t, n_v, d) and audio tokens as
(B, n_a, d); every block returns tensors of the input shapes and gates its
contribution with tanh(alpha), alpha starting at zero. Pooling never
crosses the batch axis.
"""
from __future__ import annotations

import logging

import numpy as np

from . import functional as F
from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError
from .nn import Attention, LayerNorm, Linear, Module, TransformerBlock
from .tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

FUSION_HEADS = 2


def _check_pair(V: Tensor, A: Tensor, dim: int) -> None:
    if V.ndim != 4 or A.ndim != 3:
        raise DimensionError(f"Fusion expects V (B, t, n, d) and A (B, n, d), got {V.shape} and {A.shape}")
    if V.shape[0] != A.shape[0]:
        raise DimensionError(f"Vision batch {V.shape[0]} does not match audio batch {A.shape[0]}")
    if V.shape[-1] != dim or A.shape[-1] != dim:
        raise DimensionError(f"Fusion width {dim} does not match tokens {V.shape} / {A.shape}")
    if V.shape[1] * V.shape[2] == 0 or A.shape[1] == 0:
        raise ContractError(f"Cannot pool empty token sets {V.shape} / {A.shape}")


def _pool_vision(V: Tensor, window: slice) -> Tensor:
    """Mean over all frames and the pooled tokens of each video -> (B, 1, 1, d)"""
    return V[:, :, window, :].mean(axis=(1, 2), keepdims=True)


def _pool_audio(A: Tensor, window: slice) -> Tensor:
    return A[:, window, :].mean(axis=1, keepdims=True)


def _gate(alpha: Parameter) -> Tensor:
    return F.tanh(alpha)


class FusionBlock(Module):
    """Common interface: ``block(V, A, v_pool, a_pool) -> (V, A)``"""

    def __call__(self, V: Tensor, A: Tensor, v_pool: slice = slice(None),
                 a_pool: slice = slice(None)) -> tuple[Tensor, Tensor]:
        raise NotImplementedError


# ============= BOTTLENECK =============

class FusionBottleneck(FusionBlock):
    """
    Compress both streams to d_b (affine + LayerNorm), exchange pooled
    summaries, expand back (affine + GELU) and add through the gate.
    """

    def __init__(self, dim: int, latent_dim: int, rng: np.random.Generator, latent_adaptor: Module | None = None):
        if latent_dim >= dim:
            raise ConfigurationError(f"Bottleneck width {latent_dim} must be smaller than {dim}")
        self.compress_v = Linear(dim, latent_dim, rng)
        self.norm_v = LayerNorm(latent_dim)
        self.compress_a = Linear(dim, latent_dim, rng)
        self.norm_a = LayerNorm(latent_dim)
        self.expand_v = Linear(latent_dim, dim, rng)
        self.expand_a = Linear(latent_dim, dim, rng)
        self.alpha = Parameter.zeros(())
        self.ita = latent_adaptor
        self.dim = dim

    def __call__(self, V, A, v_pool=slice(None), a_pool=slice(None)):
        return fusion_bottleneck(V, A, self, v_pool, a_pool)


def fusion_bottleneck(V: Tensor, A: Tensor, params: FusionBottleneck, v_pool: slice = slice(None),
                      a_pool: slice = slice(None)) -> tuple[Tensor, Tensor]:
    """
    One bottleneck exchange.

        V_hat = LN(V W_v + b_v),   A_hat = LN(A W_a + b_a)
        L_v = mean of V_hat over frames and pooled tokens,  L_a likewise
        U_a = gelu(expand_a(A_hat + L_v)),  U_v = gelu(expand_v(V_hat + L_a))
        A' = A + tanh(alpha) U_a,  V' = V + tanh(alpha) U_v

    Args:
        V: (B, t, n_v, d) vision tokens, one row of frames per video
        A: (B, n_a, d) audio tokens
        params: Block parameters
        v_pool: Token window of each frame entering the vision pool
        a_pool: Token window entering the audio pool

    Raises:
        ContractError: If a pooled token set is empty
    """
    _check_pair(V, A, params.dim)
    v_hat = params.norm_v(params.compress_v(V))
    a_hat = params.norm_a(params.compress_a(A))

    batch, latent = V.shape[0], v_hat.shape[-1]
    latent_v = _pool_vision(v_hat, v_pool)
    latent_a = _pool_audio(a_hat, a_pool)

    mixed_a = a_hat + latent_v.reshape(batch, 1, latent)
    mixed_v = v_hat + latent_a.reshape(batch, 1, 1, latent)
    if params.ita is not None:
        mixed_v = params.ita(mixed_v)

    update_a = F.gelu(params.expand_a(mixed_a))
    update_v = F.gelu(params.expand_v(mixed_v))
    gate = _gate(params.alpha)
    return V + gate * update_v, A + gate * update_a


# ============= ABLATION VARIANTS =============

class AddFusion(FusionBlock):
    """Gated exchange of pooled tokens in the original width"""

    def __init__(self, dim: int):
        self.alpha = Parameter.zeros(())
        self.dim = dim

    def __call__(self, V, A, v_pool=slice(None), a_pool=slice(None)):
        return fusion_add(V, A, self, v_pool, a_pool)


def fusion_add(V: Tensor, A: Tensor, params: AddFusion, v_pool: slice = slice(None),
               a_pool: slice = slice(None)) -> tuple[Tensor, Tensor]:
    _check_pair(V, A, params.dim)
    batch, dim = V.shape[0], V.shape[-1]
    gate = _gate(params.alpha)
    pooled_v = _pool_vision(V, v_pool).reshape(batch, 1, dim)
    pooled_a = _pool_audio(A, a_pool).reshape(batch, 1, 1, dim)
    return V + gate * pooled_a, A + gate * pooled_v


class MultFusion(FusionBlock):
    """Two cross-attentions (audio-to-vision, vision-to-audio), 2 heads at width d_b"""

    def __init__(self, dim: int, latent_dim: int, rng: np.random.Generator):
        self.norm_v = LayerNorm(dim)
        self.norm_a = LayerNorm(dim)
        self.vision_from_audio = Attention(dim, latent_dim, FUSION_HEADS, rng)
        self.audio_from_vision = Attention(dim, latent_dim, FUSION_HEADS, rng)
        self.alpha = Parameter.zeros(())
        self.dim = dim

    def __call__(self, V, A, v_pool=slice(None), a_pool=slice(None)):
        return fusion_mult(V, A, self)


def fusion_mult(V: Tensor, A: Tensor, params: MultFusion) -> tuple[Tensor, Tensor]:
    _check_pair(V, A, params.dim)
    batch, frames, tokens, dim = V.shape
    flat_v = params.norm_v(V.reshape(batch, frames * tokens, dim))
    normed_a = params.norm_a(A)
    gate = _gate(params.alpha)
    to_v = params.vision_from_audio(flat_v, normed_a).reshape(batch, frames, tokens, dim)
    to_a = params.audio_from_vision(normed_a, flat_v)
    return V + gate * to_v, A + gate * to_a


class MultConcatFusion(FusionBlock):
    """One transformer block over the joined token sets; its mean output is added to both"""

    def __init__(self, dim: int, latent_dim: int, rng: np.random.Generator):
        self.block = TransformerBlock(dim, FUSION_HEADS, rng, mlp_hidden=latent_dim, attn_width=latent_dim)
        self.alpha = Parameter.zeros(())
        self.dim = dim

    def __call__(self, V, A, v_pool=slice(None), a_pool=slice(None)):
        return fusion_mult_concat(V, A, self)


def fusion_mult_concat(V: Tensor, A: Tensor, params: MultConcatFusion) -> tuple[Tensor, Tensor]:
    _check_pair(V, A, params.dim)
    batch, frames, tokens, dim = V.shape
    joined = T.concat([V.reshape(batch, frames * tokens, dim), A], axis=1)
    pooled = params.block(joined).mean(axis=1, keepdims=True)
    gate = _gate(params.alpha)
    return V + gate * pooled.reshape(batch, 1, 1, dim), A + gate * pooled


def build_fusion_block(variant: str, dim: int, latent_dim: int, rng: np.random.Generator,
                       latent_adaptor: Module | None = None) -> FusionBlock:
    if variant == "bottleneck":
        return FusionBottleneck(dim, latent_dim, rng, latent_adaptor)
    if variant == "add":
        return AddFusion(dim)
    if variant == "mult":
        return MultFusion(dim, latent_dim, rng)
    if variant == "mult_concat":
        return MultConcatFusion(dim, latent_dim, rng)
    raise ConfigurationError(f"Unknown fusion variant '{variant}'")
