"""
Parameter containers: the Module base class and the reusable layers every
branch of the model is assembled from.
"""
from __future__ import annotations

import logging
from typing import Iterator

import numpy as np

from . import functional as F
from .errors import ConfigurationError, DimensionError
from .tensor import Parameter, Tensor

logger = logging.getLogger(__name__)

TOKEN_INIT_STD = 0.02


class Module:
    """
    Base class for anything that owns Parameters.

    Parameters are discovered from public attributes: Parameters directly,
    nested Modules recursively, and lists/tuples of either (indexed as
    ``blocks.0``). Attributes starting with an underscore are ignored.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def frozen_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if not p.trainable]

    def assign_names(self, prefix: str = "") -> None:
        """Stamp every Parameter with its attribute path"""
        for name, param in self.named_parameters(prefix):
            param.name = name

    def set_trainable(self, trainable: bool) -> None:
        for param in self.parameters():
            param.trainable = trainable

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: param.data for name, param in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """
        Assign values by parameter path.

        Args:
            state: Mapping of parameter path to array
            strict: Reject missing or unexpected names

        Returns:
            Names that were loaded

        Raises:
            ConfigurationError: On missing/unexpected names in strict mode
            DimensionError: On a shape mismatch
        """
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise ConfigurationError(
                    f"State does not match module: missing={missing[:5]}, unexpected={unexpected[:5]}"
                )
        loaded = []
        for name, value in state.items():
            if name in own:
                own[name].data = value
                loaded.append(name)
        return loaded


class Linear(Module):
    """
    Affine map d_in -> d_out.

    Weights are drawn from N(0, fan_in^-1) unless ``std`` is given; biases
    start at zero.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, trainable: bool = True,
                 std: float | None = None, bias: bool = True):
        if d_in < 1 or d_out < 1:
            raise DimensionError(f"Linear layer needs positive extents, got {d_in} -> {d_out}")
        self.weight = Parameter.normal((d_in, d_out), d_in ** -0.5 if std is None else std, rng, trainable)
        self.bias = Parameter.zeros((d_out,), trainable) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.affine(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, trainable: bool = True):
        self.weight = Parameter.ones((dim,), trainable)
        self.bias = Parameter.zeros((dim,), trainable)

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias)


class Attention(Module):
    """
    Multi-head attention with separate query/key/value/output projections.

    The attention width may differ from both the query and key/value input
    widths (cross-attention at a reduced width).
    """

    def __init__(self, q_dim: int, width: int, heads: int, rng: np.random.Generator,
                 kv_dim: int | None = None, out_dim: int | None = None, trainable: bool = True):
        if heads < 1 or width % heads:
            raise ConfigurationError(f"Attention width {width} is not divisible by {heads} heads")
        kv_dim = q_dim if kv_dim is None else kv_dim
        out_dim = q_dim if out_dim is None else out_dim
        self.heads = heads
        self.query = Linear(q_dim, width, rng, trainable)
        self.key = Linear(kv_dim, width, rng, trainable)
        self.value = Linear(kv_dim, width, rng, trainable)
        self.output = Linear(width, out_dim, rng, trainable)

    def __call__(self, q_tokens: Tensor, kv_tokens: Tensor | None = None) -> Tensor:
        return F.multi_head_attention(q_tokens, q_tokens if kv_tokens is None else kv_tokens, self, self.heads)


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, trainable: bool = True):
        self.fc1 = Linear(dim, hidden, rng, trainable)
        self.fc2 = Linear(hidden, dim, rng, trainable)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: x + Attn(LN(x)), then + MLP(LN(.))"""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_hidden: int,
                 attn_width: int | None = None, trainable: bool = True):
        self.norm1 = LayerNorm(dim, trainable)
        self.attn = Attention(dim, attn_width or dim, heads, rng, trainable=trainable)
        self.norm2 = LayerNorm(dim, trainable)
        self.mlp = Mlp(dim, mlp_hidden, rng, trainable)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def count_elements(params) -> int:
    return int(sum(int(np.prod(p.shape, dtype=np.int64)) for p in params))
