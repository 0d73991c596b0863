from typing import Sequence, Tuple, Union

import numpy as np

from acis.core.compute.tensor import Tensor, as_tensor, unbroadcast
from acis.core.exceptions import ContractViolation, ShapeMismatch

Operand = Union[Tensor, np.ndarray, float, int]

LEAKY_SLOPE = 0.01


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad: np.ndarray):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(grad, b.shape))

    return Tensor.from_op(a.data + b.data, (a, b), backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad: np.ndarray):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(-grad, b.shape))

    return Tensor.from_op(a.data - b.data, (a, b), backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad: np.ndarray):
        if a.requires_grad:
            a.accumulate(unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(unbroadcast(grad * a.data, b.shape))

    return Tensor.from_op(a.data * b.data, (a, b), backward)


def matmul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul needs [n,k] @ [k,m], got {a.shape} @ {b.shape}")

    def backward(grad: np.ndarray):
        if a.requires_grad:
            a.accumulate(grad @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ grad)

    return Tensor.from_op(a.data @ b.data, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(grad: np.ndarray):
        x.accumulate(grad * out)

    return Tensor.from_op(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(grad: np.ndarray):
        x.accumulate(grad / x.data)

    return Tensor.from_op(np.log(x.data), (x,), backward)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)

    def backward(grad: np.ndarray):
        x.accumulate(grad * inside)

    return Tensor.from_op(np.clip(x.data, low, high), (x,), backward)


def maximum(a: Operand, b: Operand) -> Tensor:
    """Elementwise max. Ties route the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"maximum needs equal shapes, got {a.shape} and {b.shape}")
    first = a.data >= b.data

    def backward(grad: np.ndarray):
        if a.requires_grad:
            a.accumulate(grad * first)
        if b.requires_grad:
            b.accumulate(grad * ~first)

    return Tensor.from_op(np.where(first, a.data, b.data), (a, b), backward)


def total(x: Tensor) -> Tensor:
    def backward(grad: np.ndarray):
        x.accumulate(np.broadcast_to(grad, x.shape).copy())

    return Tensor.from_op(np.array(x.data.sum()), (x,), backward)


def mean(x: Tensor) -> Tensor:
    count = x.data.size
    if count == 0:
        raise ContractViolation("mean of an empty tensor")

    def backward(grad: np.ndarray):
        x.accumulate(np.full(x.shape, float(grad) / count))

    return Tensor.from_op(np.array(x.data.mean()), (x,), backward)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def backward(grad: np.ndarray):
        x.accumulate(grad.reshape(x.shape))

    return Tensor.from_op(out, (x,), backward)


def take(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def backward(grad: np.ndarray):
        full = np.zeros_like(x.data)
        np.add.at(full, index, grad)
        x.accumulate(full)

    return Tensor.from_op(np.array(out), (x,), backward)


def concat(tensors: Sequence[Operand], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(grad: np.ndarray):
        for tensor, start, stop in zip(tensors, bounds[:-1], bounds[1:]):
            if tensor.requires_grad:
                tensor.accumulate(np.take(grad, np.arange(start, stop), axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0

    def backward(grad: np.ndarray):
        x.accumulate(grad * positive)

    return Tensor.from_op(x.data * positive, (x,), backward)


def leaky_relu(x: Tensor) -> Tensor:
    slope = np.where(x.data > 0, 1.0, LEAKY_SLOPE)

    def backward(grad: np.ndarray):
        x.accumulate(grad * slope)

    return Tensor.from_op(x.data * slope, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # split on sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(grad: np.ndarray):
        x.accumulate(grad * out * (1.0 - out))

    return Tensor.from_op(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(grad: np.ndarray):
        x.accumulate(grad * (1.0 - out**2))

    return Tensor.from_op(out, (x,), backward)


ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def activation(name: str, x: Tensor) -> Tensor:
    try:
        fn = ACTIVATIONS[name]
    except KeyError:
        raise ContractViolation(f"unknown activation '{name}', expected one of {sorted(ACTIVATIONS)}")
    return fn(x)
