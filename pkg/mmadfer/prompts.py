"""
Learnable prompt tokens with progressive per-depth updates.

A bank holds base prompts P (M x d) and one slice P^k (M^l x d) per hook
layer. Prompts are appended after the data tokens; at the k-th hook layer
rows [(k-1)*M^l, k*M^l) of the prompt block receive P^k.
"""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError
from .nn import TOKEN_INIT_STD, Module
from .tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


class PromptBank(Module):
    """
    Base prompts plus progressive slices for one modality.

    With no hook layers the base prompts are static: injected once and
    never updated with depth.

    Raises:
        ConfigurationError: If M is not a multiple of the hook count or the
            hook layers are not strictly increasing
    """

    def __init__(self, num_prompts: int, dim: int, hook_layers: Sequence[int], rng: np.random.Generator):
        hook_layers = tuple(int(h) for h in hook_layers)
        if any(b <= a for a, b in zip(hook_layers, hook_layers[1:])):
            raise ConfigurationError(f"Prompt hook layers {list(hook_layers)} must be strictly increasing")
        if hook_layers and num_prompts % len(hook_layers):
            raise ConfigurationError(
                f"{num_prompts} prompts cannot be split evenly over {len(hook_layers)} hook layers"
            )
        self.dim = dim
        self.num_prompts = num_prompts
        self.hook_layers = hook_layers if num_prompts else ()
        self.slice_size = num_prompts // len(self.hook_layers) if self.hook_layers else 0
        self.base = Parameter.normal((num_prompts, dim), TOKEN_INIT_STD, rng) if num_prompts else None
        self.progressive = [
            Parameter.normal((self.slice_size, dim), TOKEN_INIT_STD, rng) for _ in self.hook_layers
        ]

    def hook_index(self, layer: int) -> int | None:
        """Zero-based k of ``layer`` among the hook layers, or None"""
        try:
            return self.hook_layers.index(layer)
        except ValueError:
            return None

    def slice_rows(self, k: int) -> tuple[int, int]:
        return k * self.slice_size, (k + 1) * self.slice_size


def inject_prompts(tokens: Tensor, bank: PromptBank | None) -> Tensor:
    """
    Append the base prompts after the data tokens of every sequence.

    Args:
        tokens: (..., n, d)
        bank: Prompt bank, or None for no prompts

    Returns:
        (..., n + M, d) with the first n rows unchanged
    """
    if bank is None or not bank.num_prompts:
        return tokens
    if tokens.shape[-1] != bank.dim:
        raise ConfigurationError(f"Token width {tokens.shape[-1]} does not match prompt width {bank.dim}")
    lead = tokens.shape[:-2]
    prompts = T.broadcast_to(bank.base, (*lead, bank.num_prompts, bank.dim))
    return T.concat([tokens, prompts], axis=-2)


def progressive_update(tokens: Tensor, bank: PromptBank | None, layer: int) -> Tensor:
    """
    Add P^k to the k-th slice of the prompt rows (the last M rows of
    ``tokens``). A layer that is not a hook layer leaves ``tokens`` as is.

    ``tokens`` may be the full sequence (..., n + M, d) or the working
    prompt block itself (M, d).
    """
    if bank is None:
        return tokens
    k = bank.hook_index(layer)
    if k is None:
        return tokens
    length = tokens.shape[-2]
    if length < bank.num_prompts:
        raise ContractError(f"Sequence of length {length} holds no {bank.num_prompts} prompt rows")
    start, stop = bank.slice_rows(k)
    offset = length - bank.num_prompts
    dtype = tokens.dtype
    before = T.as_tensor(np.zeros((offset + start, bank.dim), dtype=dtype))
    after = T.as_tensor(np.zeros((bank.num_prompts - stop, bank.dim), dtype=dtype))
    delta = T.concat([before, bank.progressive[k], after], axis=0)
    return tokens + delta


def strip_prompts(tokens: Tensor, num_prompts: int) -> Tensor:
    """
    Drop the trailing ``num_prompts`` rows.

    Raises:
        ContractError: If the sequence is not longer than ``num_prompts``
    """
    if num_prompts == 0:
        return tokens
    length = tokens.shape[-2]
    if length <= num_prompts:
        raise ContractError(f"Cannot strip {num_prompts} prompts from a sequence of length {length}")
    return tokens[..., : length - num_prompts, :]


class PromptPass:
    """
    Per-forward bookkeeping of progressive updates for one bank.

    Each hook may fire once; ``finish`` checks that the updated rows add up
    to M, or to zero for a static bank.
    """

    def __init__(self, bank: PromptBank | None):
        self.bank = bank
        self.fired: list[int] = []
        self.rows_updated = 0

    def apply(self, tokens: Tensor, layer: int) -> Tensor:
        if self.bank is None or self.bank.hook_index(layer) is None:
            return tokens
        if layer in self.fired:
            raise ContractError(f"Prompt hook at layer {layer} fired twice in one forward pass")
        self.fired.append(layer)
        self.rows_updated += self.bank.slice_size
        return progressive_update(tokens, self.bank, layer)

    def finish(self) -> None:
        expected = self.bank.num_prompts if self.bank is not None and self.bank.hook_layers else 0
        if self.rows_updated != expected:
            raise ContractError(f"Progressive updates covered {self.rows_updated} prompt rows, expected {expected}")
