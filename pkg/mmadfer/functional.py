"""
Layer-level operations composed from the tensor primitives: affine maps,
layer normalization, activations and scaled dot-product attention.
"""
from __future__ import annotations

from typing import Protocol

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

LAYER_NORM_EPS = 1e-6


class _Projection(Protocol):
    weight: Tensor
    bias: Tensor | None


class AttentionWeights(Protocol):
    """Anything exposing query/key/value/output projections"""
    query: _Projection
    key: _Projection
    value: _Projection
    output: _Projection


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """
    y = xW + b over the last axis of ``x``.

    Raises:
        DimensionError: If the inner extents (or the bias) do not match
    """
    if W.ndim != 2 or x.ndim < 1 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"affine: input shape {x.shape} does not match weight shape {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise DimensionError(f"affine: bias shape {b.shape} does not match weight shape {W.shape}")
    if x.ndim == 1:
        y = (x.reshape(1, -1) @ W).reshape(W.shape[1])
    else:
        y = x @ W
    return y + b if b is not None else y


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """
    Per-row normalization over the last axis, scaled by gamma and shifted by beta.

    Raises:
        DimensionError: If the last extent is zero or does not match gamma/beta
    """
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError(f"layer_norm: cannot normalize rows of width 0 (shape {x.shape})")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: input shape {x.shape} does not match gamma {gamma.shape} / beta {beta.shape}"
        )
    return T.layer_norm(x, gamma, beta, eps)


def gelu(x: Tensor) -> Tensor:
    return T.gelu(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} is out of range for shape {x.shape}")
    return T.softmax(x, axis=axis)


def tanh(x: Tensor) -> Tensor:
    return T.tanh(x)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    return T.cross_entropy(logits, labels)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, width = x.shape
    return x.reshape(*lead, n, heads, width // heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, n, head_dim = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, n, heads * head_dim)


def multi_head_attention(q_tokens: Tensor, kv_tokens: Tensor, params: AttentionWeights, heads: int) -> Tensor:
    """
    Scaled dot-product attention with ``heads`` heads.

    Queries come from ``q_tokens``, keys and values from ``kv_tokens``; any
    leading axes are treated as batch axes. Scores are scaled by
    1/sqrt(width/heads) where width is the attention width.

    Args:
        q_tokens: (..., n_q, d_q)
        kv_tokens: (..., n_k, d_kv)
        params: query/key/value/output projections
        heads: Number of heads

    Returns:
        Tensor of shape (..., n_q, d_out)

    Raises:
        ConfigurationError: If the attention width is not divisible by ``heads``
    """
    width = params.query.weight.shape[1]
    if heads < 1 or width % heads:
        raise ConfigurationError(f"Attention width {width} is not divisible by {heads} heads")
    head_dim = width // heads

    q = _split_heads(affine(q_tokens, params.query.weight, params.query.bias), heads)
    k = _split_heads(affine(kv_tokens, params.key.weight, params.key.bias), heads)
    v = _split_heads(affine(kv_tokens, params.value.weight, params.value.bias), heads)

    scores = (q @ k.swapaxes(-1, -2)) * (head_dim ** -0.5)
    mixed = _merge_heads(softmax(scores, axis=-1) @ v)
    return affine(mixed, params.output.weight, params.output.bias)
