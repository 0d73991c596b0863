import contextlib
import contextvars
import logging
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

try:
    from typing import Self
except ImportError:
    from typing_extensions import Self

from acis.core.exceptions import ContractViolation, NonFiniteValue, ShapeMismatch

log = logging.getLogger("acis.core.compute.tensor")

ArrayLike = Union[np.ndarray, float, int, Sequence]

# per thread and per asyncio task
_grad_enabled: "contextvars.ContextVar[bool]" = contextvars.ContextVar("acis_grad_enabled", default=True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """
    Disables graph construction inside the block.
    Operations still compute values, but results never record their parents.
    """
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # sum out the leading axes numpy added, then the axes that were broadcast from 1
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)

    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)

    return grad


class Tensor:
    """
    Dense float64 array that records how it was computed.

    Every operation on tensors with requires_grad set appends a node to a dynamic graph (the tape);
    backward() walks that graph once in reverse topological order and accumulates gradients into the
    leaves. The graph of intermediate nodes is released after the walk.
    """

    # make numpy defer to the reflected operators, e.g. ndarray * Tensor -> Tensor.__rmul__
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @classmethod
    def from_op(
        cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable[[np.ndarray], None]
    ) -> "Tensor":
        out = cls(data)
        if not np.all(np.isfinite(out.data)):
            raise NonFiniteValue(f"operation produced non-finite values in a tensor of shape {out.shape}")
        if _grad_enabled.get() and any(parent.requires_grad for parent in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward

        return out

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate(self, grad: np.ndarray):
        if grad.shape != self.data.shape:
            raise ShapeMismatch(f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteValue(f"non-finite gradient reached a tensor of shape {self.data.shape}")

        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: Optional[ArrayLike] = None):
        if not self.requires_grad:
            raise ContractViolation("backward() called on a tensor that does not require grad")

        if grad is None:
            if self.data.size != 1:
                raise ContractViolation(f"backward() without a seed needs a scalar, got shape {self.shape}")
            seed = np.ones_like(self.data)
        else:
            seed = np.array(grad, dtype=np.float64).reshape(self.data.shape)

        order = self._topological_order()
        self.accumulate(seed)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)

        # consume the tape: intermediate nodes forget their parents
        for node in order:
            if node._parents:
                node._parents = ()
                node._backward = None

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        return order

    # operators are defined in acis.core.compute.ops and attached there
    def __add__(self, other) -> Self:
        from acis.core.compute import ops

        return ops.add(self, other)

    def __radd__(self, other) -> Self:
        from acis.core.compute import ops

        return ops.add(other, self)

    def __sub__(self, other) -> Self:
        from acis.core.compute import ops

        return ops.sub(self, other)

    def __rsub__(self, other) -> Self:
        from acis.core.compute import ops

        return ops.sub(other, self)

    def __mul__(self, other) -> Self:
        from acis.core.compute import ops

        return ops.mul(self, other)

    def __rmul__(self, other) -> Self:
        from acis.core.compute import ops

        return ops.mul(other, self)

    def __neg__(self) -> Self:
        from acis.core.compute import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other) -> Self:
        from acis.core.compute import ops

        return ops.matmul(self, other)

    def __getitem__(self, index) -> Self:
        from acis.core.compute import ops

        return ops.take(self, index)

    def reshape(self, *shape) -> Self:
        from acis.core.compute import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self) -> Self:
        from acis.core.compute import ops

        return ops.total(self)

    def mean(self) -> Self:
        from acis.core.compute import ops

        return ops.mean(self)


class Parameter(Tensor):
    """
    A named leaf tensor owned by a module.
    Non-trainable parameters still pass gradients through the graph, but optimizers never update them.
    """

    def __init__(self, data: ArrayLike, name: str = "", trainable: bool = True):
        super(Parameter, self).__init__(data, requires_grad=True)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter(name={self.name!r}, shape={self.shape}, trainable={self.trainable})"

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)
