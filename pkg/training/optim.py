import math
from typing import List, Sequence

import numpy as np

from common.errors import InvalidArgumentError
from tensorcore.tensor import Parameter


def cosine_lr(lr0: float, iteration: int, total: int) -> float:
    """lr0 / 2 * (1 + cos(pi * it / T)), annealing to 0 at it = T"""
    if total < 1:
        raise InvalidArgumentError(f"Schedule length must be positive, got {total}")
    it = min(max(iteration, 0), total)
    return lr0 / 2.0 * (1.0 + math.cos(math.pi * it / total))


class Adam:
    def __init__(self, params: Sequence[Parameter], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params: List[Parameter] = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * p.grad ** 2
            update = (self.m[i] / bias1) / (np.sqrt(self.v[i] / bias2) + self.eps)
            if lr != 0.0:
                p.values = (p.values - lr * update).astype(p.dtype)
