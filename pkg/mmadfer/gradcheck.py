"""
Finite-difference verification of analytic gradients.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from . import tensor as T
from .tensor import ComputationTrace, Parameter, Tensor, backward, get_default_dtype

logger = logging.getLogger(__name__)

THRESHOLDS = {np.dtype(np.float32): 1e-3, np.dtype(np.float64): 1e-6}
_DEFAULT_EPS = {np.dtype(np.float32): 5e-3, np.dtype(np.float64): 1e-5}
_DEFAULT_FLOOR = {np.dtype(np.float32): 1e-2, np.dtype(np.float64): 1e-6}


@dataclass
class GradCheckResult:
    """Outcome of one finite-difference comparison"""
    max_rel_error: float
    worst_param: str | None = None
    worst_index: tuple[int, ...] | None = None
    per_param: dict[str, float] = field(default_factory=dict)
    max_entry_error: float = 0.0
    worst_entry: str | None = None
    failures: list[str] = field(default_factory=list)

    def passed(self, threshold: float) -> bool:
        return not self.failures and self.max_rel_error < threshold


def _param_name(param: Tensor, position: int) -> str:
    return getattr(param, "name", "") or f"param{position}"


def _assign(param: Tensor, values: np.ndarray) -> None:
    if isinstance(param, Parameter):
        param.data = values
    else:
        values = np.array(values, dtype=param.dtype)
        values.flags.writeable = False
        param.data = values


def analytic_gradients(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    """Run ``f`` under a trace and return d f / d param (zeros where f does not depend on it)"""
    for p in params:
        p.grad = None
    with ComputationTrace() as trace:
        loss = f()
    if loss.size != 1:
        raise ContractError(f"Gradient check needs a scalar objective, got shape {loss.shape}")
    if loss.requires_grad:
        backward(trace, loss)
    return [np.zeros(p.shape) if p.grad is None else np.asarray(p.grad, dtype=np.float64) for p in params]


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float | None = None,
                      floor: float | None = None) -> GradCheckResult:
    """
    Compare analytic gradients against central differences.

    Every coordinate of every parameter is perturbed by +/-eps. The error of
    a parameter is max|analytic - numeric| scaled by the larger of the two
    gradients' max-magnitude (or ``floor``); the result reports the worst one.
    ``max_entry_error`` scales every coordinate by its own magnitude instead,
    which exposes wrong small entries next to large ones. It is reported,
    not gated on.

    Args:
        f: Deterministic zero-argument callable returning a scalar Tensor
            computed from ``params``
        params: Tensors requiring gradients
        eps: Perturbation size (defaults depend on the active precision)
        floor: Lower bound of the error denominator

    Returns:
        GradCheckResult; a non-finite objective is listed in ``failures`` with
        the coordinate that produced it

    Raises:
        ContractError: If eps is not positive or f is not scalar
    """
    dtype = get_default_dtype()
    eps = _DEFAULT_EPS[dtype] if eps is None else eps
    floor = _DEFAULT_FLOOR[dtype] if floor is None else floor
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")

    analytic = analytic_gradients(f, params)
    result = GradCheckResult(max_rel_error=0.0)

    for position, (param, grad) in enumerate(zip(params, analytic)):
        name = _param_name(param, position)
        original = np.array(param.data)
        numeric = np.zeros(param.shape, dtype=np.float64)
        try:
            for idx in np.ndindex(*param.shape):
                plus, minus = original.copy(), original.copy()
                plus[idx] += eps
                minus[idx] -= eps
                step = float(plus[idx]) - float(minus[idx])
                _assign(param, plus)
                f_plus = f().item()
                _assign(param, minus)
                f_minus = f().item()
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    result.failures.append(f"{name}{list(idx)}: non-finite objective")
                    result.max_rel_error = float("inf")
                    continue
                numeric[idx] = (f_plus - f_minus) / step
        finally:
            _assign(param, original)

        scale = max(float(np.abs(grad).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)), floor)
        diff = np.abs(grad - numeric)
        error = float(diff.max(initial=0.0)) / scale
        if result.worst_param is None or error > result.per_param[result.worst_param]:
            result.worst_param = name
            result.worst_index = tuple(int(i) for i in np.unravel_index(int(diff.argmax()), diff.shape)) \
                if diff.size else ()
        result.per_param[name] = error
        result.max_rel_error = max(result.max_rel_error, error)

        entry_scale = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), floor)
        entry_errors = diff / entry_scale
        if entry_errors.size and float(entry_errors.max()) > result.max_entry_error:
            worst = np.unravel_index(int(entry_errors.argmax()), entry_errors.shape)
            result.max_entry_error = float(entry_errors.max())
            result.worst_entry = f"{name}{[int(i) for i in worst]}"

    return result


def random_projection_loss(output: Tensor, seed: int = 0) -> Tensor:
    """
    Scalar sum(output * R) with a fixed random R, so that gradients through
    normalizing ops (softmax, layer norm) are not trivially zero.
    """
    weights = np.random.default_rng(seed).normal(size=output.shape) / np.sqrt(max(output.size, 1))
    return (output * weights).sum()


# ============= SUITE =============

def _randomize(module, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Replace every parameter (norm gains and zero biases included) by random values"""
    for param in module.parameters():
        param.data = rng.normal(0.0, scale, size=param.shape)


def _input(rng: np.random.Generator, *shape: int, name: str = "x") -> Tensor:
    x = Tensor(rng.normal(size=shape), requires_grad=True)
    x.name = name
    return x


def _case(module, prefix: str, inputs: Sequence[Tensor], forward: Callable[[], Tensor], seed: int):
    if module is not None:
        module.assign_names(f"{prefix}.")
    params = list(inputs) + ([] if module is None else module.trainable_parameters())
    return (lambda: random_projection_loss(forward(), seed)), params


def gradcheck_suite(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    """
    Small randomized instances of every differentiable op and block, built
    in the active precision. Each entry is (objective, params).
    """
    from . import functional as F
    from .fusion import AddFusion, FusionBottleneck, MultConcatFusion, MultFusion
    from .nn import Attention, LayerNorm, Linear, TransformerBlock
    from .prompts import PromptBank, PromptPass, inject_prompts
    from .temporal import LatentTemporalAdaptor, TemporalAdaptor, TemporalHead, jam_forward

    rng = np.random.default_rng(seed)
    cases = {}

    linear = Linear(3, 2, rng)
    _randomize(linear, rng)
    x = _input(rng, 4, 3)
    cases["affine"] = _case(linear, "affine", [x], lambda: linear(x), seed)

    norm = LayerNorm(5)
    _randomize(norm, rng)
    x_norm = _input(rng, 3, 5)
    cases["layer_norm"] = _case(norm, "layer_norm", [x_norm], lambda: norm(x_norm), seed)

    x_gelu = _input(rng, 3, 4)
    cases["gelu"] = _case(None, "gelu", [x_gelu], lambda: F.gelu(x_gelu), seed)
    x_soft = _input(rng, 3, 4)
    cases["softmax"] = _case(None, "softmax", [x_soft], lambda: F.softmax(x_soft, axis=-1), seed)
    x_tanh = _input(rng, 3, 4)
    cases["tanh"] = _case(None, "tanh", [x_tanh], lambda: F.tanh(x_tanh), seed)
    logits = _input(rng, 4, 3)
    labels = [0, 2, 1, 2]
    cases["cross_entropy"] = ((lambda: F.cross_entropy(logits, labels)), [logits])

    attention = Attention(8, 8, 2, rng)
    _randomize(attention, rng)
    q, kv = _input(rng, 3, 8, name="q"), _input(rng, 4, 8, name="kv")
    cases["attention"] = _case(attention, "attention", [q, kv], lambda: attention(q, kv), seed)

    block = TransformerBlock(8, 2, rng, mlp_hidden=16)
    _randomize(block, rng)
    x_block = _input(rng, 4, 8)
    cases["encoder_block"] = _case(block, "encoder_block", [x_block], lambda: block(x_block), seed)

    bank = PromptBank(4, 8, (1, 2), rng)
    x_prompt = _input(rng, 2, 3, 8)

    def prompt_forward():
        tokens = inject_prompts(x_prompt, bank)
        hooks = PromptPass(bank)
        for layer in (1, 2):
            tokens = hooks.apply(F.gelu(tokens), layer)
        hooks.finish()
        return tokens

    cases["progressive_prompts"] = _case(bank, "prompts", [x_prompt], prompt_forward, seed)

    V, A = _input(rng, 2, 2, 3, 8, name="V"), _input(rng, 2, 4, 8, name="A")
    fusion_blocks = {
        "fusion_bottleneck": FusionBottleneck(8, 2, rng),
        "fusion_add": AddFusion(8),
        "fusion_mult": MultFusion(8, 4, rng),
        "fusion_mult_concat": MultConcatFusion(8, 4, rng),
        "ita_latent": FusionBottleneck(8, 4, rng, LatentTemporalAdaptor(4, rng)),
    }
    for name, fusion in fusion_blocks.items():
        _randomize(fusion, rng)

        def fusion_forward(fusion=fusion):
            v_out, a_out = fusion(V, A)
            return T.concat([v_out.reshape(2, 6, 8), a_out], axis=1)

        cases[name] = _case(fusion, name, [V, A], fusion_forward, seed)

    adaptor = TemporalAdaptor(8, 4, rng)
    _randomize(adaptor, rng)
    cases["ita"] = _case(adaptor, "ita", [V], lambda: adaptor(V), seed)

    head = TemporalHead(8, 8, 3, 4, rng, heads=2)
    _randomize(head, rng)
    seq = _input(rng, 2, 3, 8, name="seq")
    cases["jam"] = _case(head, "head", [seq], lambda: jam_forward(seq, head), seed)
    cases["mtt"] = _case(head, "head", [seq], lambda: head(seq), seed)
    return cases


def run_gradcheck_suite(seed: int = 0, only: Sequence[str] | None = None) -> dict[str, GradCheckResult]:
    results = {}
    for name, (objective, params) in gradcheck_suite(seed).items():
        if only and name not in only:
            continue
        results[name] = finite_diff_check(objective, params)
        logger.info(f"gradcheck {name}: max rel. error {results[name].max_rel_error:.3e}")
    return results
