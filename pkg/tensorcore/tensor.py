"""
Dense tensor with reverse-mode differentiation.

A DiffTensor records the operation that produced it (parents plus a closure
mapping the output gradient to one gradient per parent). backward() walks the
graph in reverse topological order and accumulates gradients additively, so a
tensor used twice receives the sum of both contributions.
"""
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from common.errors import InvalidArgumentError, NumericError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

MAX_RANK = 4


class DiffTensor:
    def __init__(self, values, requires_grad: bool = False, op: str = 'leaf',
                 parents: Tuple['DiffTensor', ...] = (), backward_fn: Optional[BackwardFn] = None):
        self.values = np.asarray(values)
        if self.values.ndim > MAX_RANK:
            raise InvalidArgumentError(f"Tensors are limited to rank {MAX_RANK}, got {self.values.shape}")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward_fn = backward_fn

    @classmethod
    def from_op(cls, values: np.ndarray, op: str, parents: Sequence['DiffTensor'],
                backward_fn: BackwardFn) -> 'DiffTensor':
        """Wrap an op result, recording the graph edge only when needed"""
        values = np.asarray(values)
        if not np.all(np.isfinite(values)):
            raise NumericError(f"Non-finite values produced by {op}", op=op)
        if any(p.requires_grad for p in parents):
            return cls(values, requires_grad=True, op=op, parents=tuple(parents), backward_fn=backward_fn)
        return cls(values, op=op)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise InvalidArgumentError(f"item() needs a single element, shape is {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> 'DiffTensor':
        return DiffTensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.values.shape:
            raise InvalidArgumentError(
                f"Gradient shape {grad.shape} does not match value shape {self.values.shape} ({self.op})")
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.values.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"DiffTensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the ops module does the work.
    def __add__(self, other):
        from tensorcore import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from tensorcore import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from tensorcore import ops
        return ops.mul(self, other)

    __rmul__ = __mul__


class Parameter(DiffTensor):
    def __init__(self, values, name: str = ''):
        super().__init__(np.array(values, copy=True), requires_grad=True, op='param')
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"

    @classmethod
    def uniform(cls, shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator,
                dtype=np.float64, name: str = '') -> 'Parameter':
        bound = np.sqrt(1.0 / max(fan_in, 1))
        return cls(rng.uniform(-bound, bound, size=shape).astype(dtype), name=name)

    @classmethod
    def zeros(cls, shape: Tuple[int, ...], dtype=np.float64, name: str = '') -> 'Parameter':
        return cls(np.zeros(shape, dtype=dtype), name=name)


def as_tensor(x, dtype=None) -> DiffTensor:
    if isinstance(x, DiffTensor):
        return x
    values = np.asarray(x, dtype=dtype) if dtype is not None else np.asarray(x, dtype=np.float64)
    return DiffTensor(values)


def _topological_order(root: DiffTensor):
    order, visited = [], set()
    stack = [(root, False)]
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


def backward(loss: DiffTensor) -> None:
    """Propagate d(loss)/d(x) into every reachable tensor that requires grad"""
    if loss.values.size != 1:
        raise InvalidArgumentError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.values)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._backward_fn is None:
            node.accumulate(grad)
            continue
        for parent, parent_grad in zip(node._parents, node._backward_fn(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad
