"""
Central finite-difference gradient checking.

Relative error per entry is |analytic - numeric| / max(|analytic|, |numeric|).
Entries whose magnitude is below ABS_FLOOR are compared absolutely instead;
their error is rescaled so that an absolute miss of ABS_FLOOR reports as
REL_TOL, keeping a single worst-error number per check.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from tensorcore.tensor import DiffTensor

STEP = 1e-6
REL_TOL = 1e-5
ABS_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    name: str
    worst_relative_error: float
    entries_checked: int

    @property
    def passed(self) -> bool:
        return self.worst_relative_error < REL_TOL


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    diff = np.abs(analytic - numeric)
    magnitude = np.maximum(np.abs(analytic), np.abs(numeric))
    small = magnitude < ABS_FLOOR
    return np.where(small, diff / ABS_FLOOR * REL_TOL, diff / np.where(small, 1.0, magnitude))


def check_gradient(loss_fn: Callable[[], DiffTensor], tensors: Sequence[DiffTensor],
                   name: str = 'op', max_entries: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None, step: float = STEP) -> GradCheckResult:
    """Compare backward() against central differences of loss_fn.

    loss_fn rebuilds the graph from the current tensor values each call.
    With max_entries, only a random subset of entries per tensor is perturbed.
    """
    for t in tensors:
        # perturbation writes in place, so own a contiguous writable buffer
        t.values = np.array(t.values, copy=True)
        t.zero_grad()
    loss_fn().backward()
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in tensors]

    worst, checked = 0.0, 0
    for tensor, grad in zip(tensors, analytic):
        flat = tensor.values.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        numeric = np.empty(len(indices))
        for n, i in enumerate(indices):
            original = flat[i]
            flat[i] = original + step
            plus = loss_fn().item()
            flat[i] = original - step
            minus = loss_fn().item()
            flat[i] = original
            numeric[n] = (plus - minus) / (2.0 * step)
        errors = relative_errors(grad.reshape(-1)[indices], numeric)
        if errors.size:
            worst = max(worst, float(errors.max()))
        checked += len(indices)
    return GradCheckResult(name, worst, checked)
