"""
Tests for the tensor kernel and reverse-mode differentiation
"""
import numpy as np
import pytest

from mmadfer import tensor as T
from mmadfer.errors import ContractError, DimensionError
from mmadfer.tensor import ComputationTrace, Parameter, Tensor, backward, get_default_dtype, precision


def _grads(fn, *inputs):
    with ComputationTrace() as trace:
        loss = fn(*inputs)
    backward(trace, loss)
    return [x.grad for x in inputs]


def test_broadcast_add_reduces_gradient():
    """Gradients of a broadcast operand are summed back to its shape"""
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.arange(3.0), requires_grad=True)
    gx, gb = _grads(lambda x, b: (x + b).sum(), x, b)
    assert np.array_equal(gx, np.ones((2, 3))), "x receives one per element"
    assert np.array_equal(gb, [2.0, 2.0, 2.0]), "bias gradient must sum over the broadcast axis"


def test_matmul_gradients_match_closed_form():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    ga, gb = _grads(lambda a, b: (a @ b).sum(), a, b)
    assert np.allclose(ga, np.ones((3, 2)) @ b.data.T, atol=1e-6)
    assert np.allclose(gb, a.data.T @ np.ones((3, 2)), atol=1e-6)


def test_gradient_accumulates_over_reuse():
    """A tensor used twice gets the sum of both paths"""
    x = Tensor([3.0], requires_grad=True)
    (gx,) = _grads(lambda x: (x * x + x).sum(), x)
    assert np.allclose(gx, [7.0]), f"d(x^2 + x)/dx at 3 is 7, got {gx}"


def test_no_trace_records_nothing():
    """Inference outside a trace produces constant tensors"""
    x = Tensor(np.ones(3), requires_grad=True)
    y = (x * 2.0).sum()
    assert not y.requires_grad, "ops outside a trace must not require gradients"

    with ComputationTrace() as trace:
        Tensor(np.ones(3)) * 2.0
    assert len(trace) == 0, "ops on constants are not recorded"


def test_trace_records_execution_order():
    x = Tensor(np.ones(3), requires_grad=True)
    with ComputationTrace() as trace:
        (T.exp(x) * 2.0).sum()
    assert trace.ops() == ["exp", "mul", "sum"]


def test_tensor_buffers_are_read_only():
    x = Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        x.data[0] = 1.0


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with ComputationTrace() as trace:
        y = x * 2.0
    with pytest.raises(ContractError):
        backward(trace, y)


def test_backward_rejects_loss_from_other_trace():
    x = Tensor(np.ones(3), requires_grad=True)
    with ComputationTrace():
        loss = x.sum()
    with pytest.raises(ContractError):
        backward(ComputationTrace(), loss)


def test_mean_over_empty_axis_fails():
    with pytest.raises(ContractError):
        Tensor(np.zeros((0, 3))).mean(axis=0)


def test_fancy_index_accumulates_repeated_rows():
    x = Tensor(np.arange(3.0), requires_grad=True)
    (gx,) = _grads(lambda x: x[np.array([0, 0, 1])].sum(), x)
    assert np.array_equal(gx, [2.0, 1.0, 0.0]), "repeated indices must accumulate"


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 2)), requires_grad=True)
    weights = np.arange(6.0).reshape(3, 2)
    ga, gb = _grads(lambda a, b: (T.concat([a, b], axis=0) * weights).sum(), a, b)
    assert np.array_equal(ga, weights[:2])
    assert np.array_equal(gb, weights[2:])


def test_reshape_mismatch_raises_dimension_error():
    with pytest.raises(DimensionError):
        Tensor(np.zeros(6)).reshape(4, 2)


def test_cross_entropy_of_uniform_logits():
    logits = Tensor(np.zeros((2, 4)))
    loss = T.cross_entropy(logits, [1, 3])
    assert np.isclose(loss.item(), np.log(4.0), atol=1e-6)


def test_precision_context_restores_dtype():
    before = get_default_dtype()
    with precision("float64"):
        assert Tensor([1.0]).dtype == np.float64
    assert get_default_dtype() == before, "precision() must restore the previous dtype"


def test_precision_rejects_integer_dtype():
    with pytest.raises(ContractError):
        T.set_default_dtype("int32")


def test_parameter_materializes_lazily():
    """Large parameters are described without allocating their values"""
    param = Parameter.normal((4000, 4000), 0.02, np.random.default_rng(0), trainable=False)
    assert not param.is_materialized
    assert param.size == 16_000_000
    small = Parameter.normal((3,), 1.0, np.random.default_rng(0))
    small.data
    assert small.is_materialized


def test_parameter_values_depend_only_on_seed():
    a = Parameter.normal((3, 2), 1.0, np.random.default_rng(7))
    b = Parameter.normal((3, 2), 1.0, np.random.default_rng(7))
    assert np.array_equal(a.data, b.data)


def test_parameter_rejects_wrong_shape():
    param = Parameter.zeros((2, 3))
    param.name = "w"
    with pytest.raises(DimensionError) as info:
        param.data = np.zeros((3, 2))
    assert "(3, 2)" in str(info.value) and "(2, 3)" in str(info.value), "message names both shapes"


def test_frozen_parameter_gets_no_gradient():
    frozen = Parameter.ones((2,), trainable=False)
    live = Parameter.ones((2,))
    with ComputationTrace() as trace:
        loss = (frozen * live).sum()
    backward(trace, loss)
    assert frozen.grad is None, "frozen parameters never receive gradients"
    assert np.array_equal(live.grad, [1.0, 1.0])
