"""
Symmetric spherical convolution.

    out = Max(Conv(pad(S); k), Conv(pad(S); Flip(k)))

Flip reverses only the kernel's last (azimuth) axis; input channels keep
their order. The max makes the layer commute with azimuth reflection, and the
cyclic azimuth padding makes it commute with column shifts.
"""
from typing import Union

import numpy as np

from common.errors import InvalidArgumentError
from spa_sconv.padding import pad, zero_pad
from tensorcore import ops
from tensorcore.module import Module
from tensorcore.tensor import DiffTensor, Parameter


def flip_kernel(kernel: Union[DiffTensor, np.ndarray]) -> Union[DiffTensor, np.ndarray]:
    if isinstance(kernel, DiffTensor):
        return ops.flip_last_axis(kernel)
    return np.asarray(kernel)[..., ::-1].copy()


class SpaConvLayer(Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, dtype=np.float64, spherical_padding: bool = True, symmetric: bool = True):
        if kernel_size % 2 == 0 or kernel_size < 1:
            raise InvalidArgumentError(f"Kernel size must be odd, got {kernel_size}")
        if stride not in (1, 2):
            raise InvalidArgumentError(f"Stride must be 1 or 2, got {stride}")
        fan_in = c_in * kernel_size * kernel_size
        self.kernel = Parameter.uniform((c_out, c_in, kernel_size, kernel_size), fan_in, rng, dtype)
        self.stride = stride
        self.spherical_padding = spherical_padding
        self.symmetric = symmetric

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[-1]

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return spa_sconv(self, x)


def spa_sconv(layer: SpaConvLayer, x: DiffTensor) -> DiffTensor:
    if x.values.ndim != 3:
        raise InvalidArgumentError(f"spa_sconv expects C x H x W, got {x.shape}")
    _, H, W = x.shape
    if W % 2:
        raise InvalidArgumentError(f"spa_sconv needs an even azimuth size, got W={W}")
    if layer.stride == 2 and H % 2:
        raise InvalidArgumentError(f"Strided spa_sconv needs even H, got H={H}")

    P = (layer.kernel_size - 1) // 2
    padded = pad(x, P) if layer.spherical_padding else zero_pad(x, P)
    out = ops.conv2d_valid(padded, layer.kernel, layer.stride)
    if layer.symmetric:
        mirrored = ops.conv2d_valid(padded, flip_kernel(layer.kernel), layer.stride)
        out = ops.elementwise_max(out, mirrored)
    return out
