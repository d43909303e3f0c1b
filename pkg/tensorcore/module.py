from typing import List, Tuple

import numpy as np

from tensorcore import ops
from tensorcore.tensor import DiffTensor, Parameter


class Module:
    """Parameter container; parameters are discovered in attribute order"""

    def named_parameters(self, prefix: str = '') -> List[Tuple[str, Parameter]]:
        found = []
        for attr, value in vars(self).items():
            found.extend(_collect(value, f"{prefix}{attr}"))
        return found

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self) -> None:
        for name, param in self.named_parameters():
            param.name = name

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def parameter_count(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))


def _collect(value, name: str) -> List[Tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        return [(name, value)]
    if isinstance(value, Module):
        return value.named_parameters(f"{name}.")
    if isinstance(value, (list, tuple)):
        found = []
        for i, item in enumerate(value):
            found.extend(_collect(item, f"{name}.{i}"))
        return found
    return []


class Linear(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = Parameter.uniform((c_out, c_in), c_in, rng, dtype)
        self.bias = Parameter.zeros((c_out,), dtype)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return ops.linear(x, self.weight, self.bias)


class MLP(Module):
    """Two linear layers with a ReLU in between, applied along the last axis"""

    def __init__(self, c_in: int, hidden: int, c_out: int, rng: np.random.Generator, dtype=np.float64):
        self.fc1 = Linear(c_in, hidden, rng, dtype)
        self.fc2 = Linear(hidden, c_out, rng, dtype)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return self.fc2(ops.relu(self.fc1(x)))


def pointwise(layer, x: DiffTensor) -> DiffTensor:
    """Apply a trailing-axis layer to every position of a C x ... map"""
    n = x.values.ndim
    moved = ops.transpose(x, tuple(range(1, n)) + (0,))
    out = layer(moved)
    return ops.transpose(out, (n - 1,) + tuple(range(n - 1)))
