"""
Boundary padding for equirectangular spherical maps.

The padding is precomputed as an index map: entry (r, c) of the padded plane
holds the flat source index h * W + w it copies. Building the map follows the
three one-based padding equations in order:

    1. centre:      pad(h + P, w + P) = S(h, w)
    2. inclination: pad(p, w + P)         = pad(2P - p + 1, w')
                    pad(H + P + p, w + P) = pad(H + P - p + 1, w')
       with w' = w + W/2 + P if w <= W/2 else w - W/2 + P
       (crossing a pole lands half a turn away in azimuth)
    3. azimuth:     pad(h, p)         = pad(h, W + p)
                    pad(h, W + P + p) = pad(h, P + p)   for every padded row

Array index = one-based index - 1 throughout.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from common.errors import InvalidArgumentError
from tensorcore import ops
from tensorcore.tensor import DiffTensor


@dataclass
class PaddedMap:
    data: np.ndarray
    P: int

    def center(self) -> np.ndarray:
        if self.P == 0:
            return self.data
        return self.data[:, self.P:-self.P, self.P:-self.P]


def check_pad(H: int, W: int, P: int) -> None:
    if W % 2:
        raise InvalidArgumentError(f"Spherical padding needs an even azimuth size, got W={W}")
    if P < 0:
        raise InvalidArgumentError(f"Pad width must be >= 0, got {P}")
    if P >= H or P > W // 2:
        raise InvalidArgumentError(f"Pad width {P} too large for a {H}x{W} map")


@lru_cache(maxsize=None)
def pad_index_map(H: int, W: int, P: int) -> np.ndarray:
    check_pad(H, W, P)
    idx = np.full((H + 2 * P, W + 2 * P), -1, dtype=np.int64)
    idx[P:P + H, P:P + W] = np.arange(H * W).reshape(H, W)

    w = np.arange(1, W + 1)
    w_prime = np.where(w <= W // 2, w + W // 2 + P, w - W // 2 + P)
    for p in range(1, P + 1):
        idx[p - 1, w + P - 1] = idx[2 * P - p, w_prime - 1]
        idx[H + P + p - 1, w + P - 1] = idx[H + P - p, w_prime - 1]

    for p in range(1, P + 1):
        idx[:, p - 1] = idx[:, W + p - 1]
        idx[:, W + P + p - 1] = idx[:, P + p - 1]

    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def zero_pad_index_map(H: int, W: int, P: int) -> np.ndarray:
    idx = np.full((H + 2 * P, W + 2 * P), -1, dtype=np.int64)
    idx[P:P + H, P:P + W] = np.arange(H * W).reshape(H, W)
    idx.setflags(write=False)
    return idx


def pad(smap: Union[DiffTensor, np.ndarray], P: int) -> Union[DiffTensor, PaddedMap]:
    """Spherically pad a C x H x W map by P cells on every side.

    A DiffTensor input yields a differentiable DiffTensor; a plain array
    yields a PaddedMap.
    """
    values = smap.values if isinstance(smap, DiffTensor) else np.asarray(smap)
    if values.ndim != 3:
        raise InvalidArgumentError(f"pad expects C x H x W, got {values.shape}")
    _, H, W = values.shape
    check_pad(H, W, P)
    if isinstance(smap, DiffTensor):
        return smap if P == 0 else ops.gather(smap, pad_index_map(H, W, P))
    if P == 0:
        return PaddedMap(values, 0)
    C = values.shape[0]
    return PaddedMap(values.reshape(C, -1)[:, pad_index_map(H, W, P)], P)


def zero_pad(smap: DiffTensor, P: int) -> DiffTensor:
    if P == 0:
        return smap
    _, H, W = smap.shape
    return ops.gather(smap, zero_pad_index_map(H, W, P))
