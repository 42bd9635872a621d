"""
Deterministic tensor algebra with reverse-mode automatic differentiation.

Tensors wrap read-only numpy buffers. While a ``ComputationTrace`` is active,
every primitive whose inputs require gradients appends a node (inputs,
output, vector-Jacobian product) to the trace; ``backward`` walks the trace
in reverse and populates ``.grad`` on leaf tensors.
"""
from __future__ import annotations

import contextlib
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy import special

from .errors import ContractError, DimensionError

_DEFAULT_DTYPE = np.dtype(np.float32)
_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def get_default_dtype() -> np.dtype:
    """Return the dtype new tensors and parameters are created with"""
    return _DEFAULT_DTYPE


def set_default_dtype(dtype: Any) -> None:
    """
    Switch the global precision.

    Args:
        dtype: float32 for training, float64 for verification paths

    Raises:
        ContractError: If the dtype is not a supported float type
    """
    global _DEFAULT_DTYPE
    resolved = np.dtype(dtype)
    if resolved not in _SUPPORTED_DTYPES:
        raise ContractError(f"Unsupported precision: {resolved}")
    _DEFAULT_DTYPE = resolved


@contextlib.contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """Temporarily switch the global precision (e.g. ``precision("float64")``)"""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def _locked(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


# ============= TRACE =============

@dataclass(frozen=True)
class TraceNode:
    """One executed primitive: its inputs, output and vector-Jacobian product"""
    op: str
    inputs: tuple["Tensor", ...]
    output: "Tensor"
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


_ACTIVE_TRACE: ContextVar["ComputationTrace | None"] = ContextVar("active_trace", default=None)


class ComputationTrace:
    """
    Ordered record of primitive ops executed while the trace is active.

    Nodes are appended in execution order, so every node's inputs were
    produced before it (topological order by construction).

    Example:
        with ComputationTrace() as trace:
            loss = (x @ w).sum()
        backward(trace, loss)
    """

    def __init__(self):
        self.nodes: list[TraceNode] = []
        self._tokens = []

    def __enter__(self) -> "ComputationTrace":
        self._tokens.append(_ACTIVE_TRACE.set(self))
        return self

    def __exit__(self, *exc_info) -> None:
        _ACTIVE_TRACE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple["Tensor", ...], output: "Tensor", vjp) -> None:
        self.nodes.append(TraceNode(op, inputs, output, vjp))

    def ops(self) -> list[str]:
        return [node.op for node in self.nodes]


def active_trace() -> ComputationTrace | None:
    return _ACTIVE_TRACE.get()


# ============= TENSOR =============

class Tensor:
    """
    n-dimensional float array with an optional gradient buffer.

    The wrapped buffer is read-only: operations always return fresh tensors.
    """

    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False):
        self.data = _locked(np.array(data, dtype=get_default_dtype()))
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return swapaxes(self, axis1, axis2)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """
    Named tensor owned by a module.

    Values are materialized lazily by ``init`` on first access so very large
    frozen backbones can be described (and counted) without allocating them.
    Only ``trainable`` parameters take part in gradient computation.
    """

    def __init__(self, shape: Sequence[int], init: Callable[[], np.ndarray] | np.ndarray,
                 trainable: bool = True, name: str = ""):
        self.name = name
        self.trainable = trainable
        self.grad = None
        self._op = None
        self._shape = tuple(int(s) for s in shape)
        self._dtype = get_default_dtype()
        self._data: np.ndarray | None = None
        self._init: Callable[[], np.ndarray] | None = None
        if callable(init):
            self._init = init
        else:
            self.data = init

    @classmethod
    def normal(cls, shape: Sequence[int], std: float, rng: np.random.Generator,
               trainable: bool = True) -> "Parameter":
        """Gaussian parameter seeded from ``rng`` at construction time"""
        seed = int(rng.integers(0, 2**63 - 1))
        shape = tuple(shape)
        return cls(shape, lambda: np.random.default_rng(seed).normal(0.0, std, size=shape), trainable)

    @classmethod
    def zeros(cls, shape: Sequence[int], trainable: bool = True) -> "Parameter":
        shape = tuple(shape)
        return cls(shape, lambda: np.zeros(shape), trainable)

    @classmethod
    def ones(cls, shape: Sequence[int], trainable: bool = True) -> "Parameter":
        shape = tuple(shape)
        return cls(shape, lambda: np.ones(shape), trainable)

    @property
    def requires_grad(self) -> bool:
        return self.trainable

    @requires_grad.setter
    def requires_grad(self, value: bool) -> None:
        self.trainable = bool(value)

    @property
    def data(self) -> np.ndarray:
        if self._data is None:
            self._data = _locked(np.asarray(self._init(), dtype=self._dtype).reshape(self._shape))
            self._init = None
        return self._data

    @data.setter
    def data(self, value: Any) -> None:
        array = np.array(value, dtype=self._dtype)
        if array.shape != self._shape:
            raise DimensionError(
                f"Cannot assign array of shape {array.shape} to parameter '{self.name}' of shape {self._shape}"
            )
        self._data = _locked(array)
        self._init = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self._shape

    @property
    def dtype(self) -> np.dtype:
        return self._dtype

    @property
    def is_materialized(self) -> bool:
        return self._data is not None

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, trainable={self.trainable})"


# ============= PRIMITIVES =============

def primitive(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _locked(np.asarray(data))
    out.grad = None
    out._op = op
    trace = _ACTIVE_TRACE.get()
    out.requires_grad = trace is not None and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        trace.record(op, inputs, out, vjp)
    return out


def as_tensor(value: Any, like: Tensor | None = None) -> Tensor:
    """Wrap constants as non-differentiable tensors (in the dtype of ``like``)"""
    if isinstance(value, Tensor):
        return value
    out = Tensor.__new__(Tensor)
    dtype = like.dtype if like is not None else get_default_dtype()
    out.data = _locked(np.array(value, dtype=dtype))
    out.requires_grad = False
    out.grad = None
    out._op = None
    return out


def _pair(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return primitive("add", a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return primitive("sub", a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return primitive("mul", a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return primitive("div", a.data / b.data, (a, b),
                   lambda g: (unbroadcast(g / b.data, a.shape),
                              unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a: Tensor) -> Tensor:
    return primitive("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: Any, b: Any) -> Tensor:
    """Batched matrix product over the last two axes"""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"Cannot multiply shapes {a.shape} and {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return primitive("matmul", a.data @ b.data, (a, b), vjp)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return primitive("sum", out, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes], dtype=np.int64))
    if count == 0:
        raise ContractError(f"Cannot average over an empty axis set of shape {a.shape}")
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return primitive("mean", out, (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"Cannot reshape {a.shape} to {tuple(shape)}")
    return primitive("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    return primitive("swapaxes", np.swapaxes(a.data, axis1, axis2), (a,),
                   lambda g: (np.swapaxes(g, axis1, axis2),))


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise DimensionError(f"Cannot broadcast {a.shape} to {tuple(shape)}")
    return primitive("broadcast_to", out, (a,), lambda g: (unbroadcast(g, a.shape),))


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def index(a: Tensor, key) -> Tensor:
    out = np.array(a.data[key])
    basic = _is_basic_index(key)

    def vjp(g):
        grad = np.zeros(a.shape, dtype=g.dtype)
        if basic:
            grad[key] = g
        else:
            np.add.at(grad, key, g)
        return (grad,)

    return primitive("index", out, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"Cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return primitive("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return primitive("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return primitive("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return primitive("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def gelu(a: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x) with Phi the standard normal CDF (erf form)"""
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / _SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return primitive("gelu", x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return primitive("softmax", out, (a,),
                   lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Normalization over the last axis followed by the affine map gamma, beta"""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        gxhat = g * gamma.data
        gx = inv / d * (d * gxhat - gxhat.sum(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, unbroadcast(g * xhat, gamma.shape), unbroadcast(g, beta.shape)

    return primitive("layer_norm", out, (x, gamma, beta), vjp)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)"""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"Cannot score logits {logits.shape} against labels {labels.shape}")
    batch = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    def vjp(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (g * grad / batch,)

    return primitive("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), vjp)


# ============= REVERSE PASS =============

def backward(trace: ComputationTrace, loss: Tensor) -> None:
    """
    Populate ``.grad`` with d(loss)/d(leaf) for every leaf tensor requiring a
    gradient that the loss depends on.

    Args:
        trace: Trace that was active while ``loss`` was computed
        loss: Scalar output recorded on ``trace``

    Raises:
        ContractError: If the loss is not a scalar or not recorded on the trace
    """
    if loss.size != 1:
        raise ContractError(f"Loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad or not any(node.output is loss for node in reversed(trace.nodes)):
        raise ContractError("Loss was not recorded on the given trace")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(trace.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for tensor, grad in zip(node.inputs, node.vjp(g)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            grads[key] = grads[key] + grad if key in grads else grad
            if tensor.is_leaf:
                leaves[key] = tensor

    for key, leaf in leaves.items():
        leaf.grad = np.asarray(grads[key], dtype=leaf.dtype).reshape(leaf.shape)
