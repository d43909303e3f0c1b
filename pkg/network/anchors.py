"""
Anchor grid: unit directions at the centres of all spherical bins, row-major
(flat index h * W + w, matching the spatial layout of a C x H x W map).
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from sphermap.convert import check_resolution


@dataclass(frozen=True)
class AnchorGrid:
    H: int
    W: int
    directions: np.ndarray

    @property
    def count(self) -> int:
        return self.H * self.W


@lru_cache(maxsize=None)
def anchor_grid(H: int, W: int) -> AnchorGrid:
    check_resolution(H, W)
    theta = (np.arange(H) + 0.5) / H * math.pi
    phi = (np.arange(W) + 0.5) / W * (2.0 * math.pi)
    th, ph = np.meshgrid(theta, phi, indexing='ij')
    st = np.sin(th)
    directions = np.stack([np.cos(ph) * st, np.sin(ph) * st, np.cos(th)], axis=-1).reshape(-1, 3)
    directions.setflags(write=False)
    return AnchorGrid(H, W, directions)
