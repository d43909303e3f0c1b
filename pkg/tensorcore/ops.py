"""
Differentiable operations on DiffTensor.

Every forward here has an exact analytic backward. Spatial ops work on single
samples laid out C x H x W; batching is done by building one graph per sample
and summing parameter gradients in sample order.

Max-style ops route the whole gradient to one winner: the first operand for
elementwise_max, the lowest index for pooling.
"""
from typing import Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from common.errors import InvalidArgumentError
from geometry.rotations import sixd_columns
from tensorcore.tensor import DiffTensor

Operand = Union[DiffTensor, np.ndarray, float, int]


def _lift(x: Operand, like: DiffTensor) -> DiffTensor:
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------

def add(a: DiffTensor, b: Operand) -> DiffTensor:
    b = _lift(b, a)
    return DiffTensor.from_op(
        a.values + b.values, 'add', (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: DiffTensor, b: Operand) -> DiffTensor:
    b = _lift(b, a)
    return DiffTensor.from_op(
        a.values - b.values, 'sub', (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: DiffTensor, b: Operand) -> DiffTensor:
    b = _lift(b, a)
    return DiffTensor.from_op(
        a.values * b.values, 'mul', (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


def scale(a: DiffTensor, c: float) -> DiffTensor:
    return DiffTensor.from_op(a.values * c, 'scale', (a,), lambda g: (g * c,))


def relu(x: DiffTensor) -> DiffTensor:
    mask = x.values > 0
    return DiffTensor.from_op(np.where(mask, x.values, 0).astype(x.dtype), 'relu', (x,),
                              lambda g: (g * mask,))


def sigmoid(x: DiffTensor) -> DiffTensor:
    v = x.values
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return DiffTensor.from_op(out, 'sigmoid', (x,), lambda g: (g * out * (1.0 - out),))


def elementwise_max(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"elementwise_max shape mismatch {a.shape} vs {b.shape}")
    first = a.values >= b.values
    return DiffTensor.from_op(
        np.where(first, a.values, b.values), 'elementwise_max', (a, b),
        lambda g: (g * first, g * ~first))


# -- reductions and reshaping ------------------------------------------------

def sum(x: DiffTensor) -> DiffTensor:  # noqa: A001 - mirrors numpy naming
    return DiffTensor.from_op(np.sum(x.values, keepdims=False).reshape(()), 'sum', (x,),
                              lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


def mean(x: DiffTensor) -> DiffTensor:
    n = x.size
    return DiffTensor.from_op(np.mean(x.values).reshape(()), 'mean', (x,),
                              lambda g: (np.broadcast_to(g / n, x.shape).astype(x.dtype),))


def reshape(x: DiffTensor, shape: Tuple[int, ...]) -> DiffTensor:
    return DiffTensor.from_op(x.values.reshape(shape), 'reshape', (x,),
                              lambda g: (g.reshape(x.shape),))


def transpose(x: DiffTensor, axes: Tuple[int, ...]) -> DiffTensor:
    inverse = tuple(np.argsort(axes))
    return DiffTensor.from_op(np.transpose(x.values, axes), 'transpose', (x,),
                              lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return DiffTensor.from_op(np.concatenate([t.values for t in tensors], axis=axis), 'concat',
                              tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def axis_max_pool(x: DiffTensor, axis: int) -> DiffTensor:
    """Max over one axis; ties send the gradient to the lowest index"""
    winner = np.argmax(x.values, axis=axis)
    out = np.take_along_axis(x.values, np.expand_dims(winner, axis), axis=axis).squeeze(axis)

    def backward_fn(g):
        grad = np.zeros_like(x.values)
        np.put_along_axis(grad, np.expand_dims(winner, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return DiffTensor.from_op(out, 'axis_max_pool', (x,), backward_fn)


def global_avg_pool(x: DiffTensor) -> DiffTensor:
    """C x H x W -> C"""
    if x.values.ndim != 3:
        raise InvalidArgumentError(f"global_avg_pool expects C x H x W, got {x.shape}")
    n = x.shape[1] * x.shape[2]
    return DiffTensor.from_op(
        x.values.mean(axis=(1, 2)), 'global_avg_pool', (x,),
        lambda g: (np.broadcast_to(g[:, None, None] / n, x.shape).astype(x.dtype),))


# -- learned layers ----------------------------------------------------------

def conv2d_valid(x: DiffTensor, kernel: DiffTensor, stride: int = 1) -> DiffTensor:
    """Unpadded cross-correlation of a C_in x H x W map with C_out x C_in x K x K"""
    if x.values.ndim != 3 or kernel.values.ndim != 4:
        raise InvalidArgumentError(f"conv2d_valid expects C x H x W and O x C x K x K, got {x.shape}, {kernel.shape}")
    c_in, H, W = x.shape
    c_out, k_in, K, K2 = kernel.shape
    if k_in != c_in or K != K2:
        raise InvalidArgumentError(f"Kernel {kernel.shape} incompatible with input {x.shape}")
    if K % 2 == 0:
        raise InvalidArgumentError(f"Kernel size must be odd, got {K}")
    if K > H or K > W:
        raise InvalidArgumentError(f"Kernel {K}x{K} larger than input {H}x{W}")
    if stride < 1:
        raise InvalidArgumentError(f"Stride must be >= 1, got {stride}")

    windows = sliding_window_view(x.values, (K, K), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(kernel.values, windows, axes=([1, 2, 3], [0, 3, 4]))
    h_out, w_out = out.shape[1], out.shape[2]

    def backward_fn(g):
        g_kernel = np.tensordot(g, windows, axes=([1, 2], [1, 2]))
        g_x = np.zeros_like(x.values)
        for i in range(K):
            for j in range(K):
                g_x[:, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += \
                    np.tensordot(kernel.values[:, :, i, j], g, axes=([0], [0]))
        return g_x, g_kernel

    return DiffTensor.from_op(out, 'conv2d_valid', (x, kernel), backward_fn)


def linear(x: DiffTensor, weight: DiffTensor, bias: DiffTensor) -> DiffTensor:
    """Affine map along the trailing axis"""
    c_out, c_in = weight.shape
    if x.shape[-1] != c_in or bias.shape != (c_out,):
        raise InvalidArgumentError(f"linear: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    out = x.values @ weight.values.T + bias.values

    def backward_fn(g):
        flat_g = g.reshape(-1, c_out)
        flat_x = x.values.reshape(-1, c_in)
        return g @ weight.values, flat_g.T @ flat_x, flat_g.sum(axis=0)

    return DiffTensor.from_op(out, 'linear', (x, weight, bias), backward_fn)


def instance_standardize(x: DiffTensor, gain: DiffTensor, shift: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    """Per-channel spatial standardization followed by a per-channel affine"""
    if x.values.ndim != 3:
        raise InvalidArgumentError(f"instance_standardize expects C x H x W, got {x.shape}")
    C, H, W = x.shape
    n = H * W
    if n < 2:
        raise InvalidArgumentError(f"instance_standardize needs at least 2 positions, got {H}x{W}")
    mu = x.values.mean(axis=(1, 2), keepdims=True)
    centered = x.values - mu
    sigma = np.sqrt((centered ** 2).mean(axis=(1, 2), keepdims=True) + eps)
    xhat = centered / sigma
    g_shape = gain.values.reshape(C, 1, 1)
    out = xhat * g_shape + shift.values.reshape(C, 1, 1)

    def backward_fn(g):
        g_xhat = g * g_shape
        g_x = (g_xhat - g_xhat.mean(axis=(1, 2), keepdims=True)
               - xhat * (g_xhat * xhat).mean(axis=(1, 2), keepdims=True)) / sigma
        return g_x, (g * xhat).sum(axis=(1, 2)), g.sum(axis=(1, 2))

    return DiffTensor.from_op(out, 'instance_standardize', (x, gain, shift), backward_fn)


# -- spatial resampling ------------------------------------------------------

def gather(x: DiffTensor, index: np.ndarray) -> DiffTensor:
    """out[c, ...] = x[c].flat[index]; index -1 reads as zero"""
    C = x.shape[0]
    flat = x.values.reshape(C, -1)
    idx = np.asarray(index, dtype=np.int64)
    valid = idx >= 0
    out = np.where(valid, flat[:, np.where(valid, idx, 0)], 0).astype(x.dtype)

    def backward_fn(g):
        grad = np.zeros_like(flat)
        np.add.at(grad, (slice(None), idx[valid]), g[:, valid])
        return (grad.reshape(x.shape),)

    return DiffTensor.from_op(out.reshape((C,) + idx.shape), 'gather', (x,), backward_fn)


def weighted_gather(x: DiffTensor, index: np.ndarray, weights: np.ndarray) -> DiffTensor:
    """out[c, q] = sum_j weights[q, j] * x[c].flat[index[q, j]], reshaped like x"""
    C = x.shape[0]
    flat = x.values.reshape(C, -1)
    idx = np.asarray(index, dtype=np.int64)
    w = np.asarray(weights, dtype=x.dtype)
    out = np.einsum('cqk,qk->cq', flat[:, idx], w)

    def backward_fn(g):
        grad = np.zeros_like(flat)
        contrib = g.reshape(C, -1)[:, :, None] * w[None]
        np.add.at(grad, (slice(None), idx), contrib)
        return (grad.reshape(x.shape),)

    return DiffTensor.from_op(out.reshape(x.shape), 'weighted_gather', (x,), backward_fn)


def upsample_nearest(x: DiffTensor, factor: int = 2) -> DiffTensor:
    out = np.repeat(np.repeat(x.values, factor, axis=1), factor, axis=2)
    C, H, W = x.shape

    def backward_fn(g):
        return (g.reshape(C, H, factor, W, factor).sum(axis=(2, 4)),)

    return DiffTensor.from_op(out, 'upsample_nearest', (x,), backward_fn)


def flip_last_axis(x: DiffTensor) -> DiffTensor:
    return DiffTensor.from_op(x.values[..., ::-1].copy(), 'flip', (x,),
                              lambda g: (g[..., ::-1].copy(),))


# -- rotation assembly -------------------------------------------------------

def matmul_left_const(const: np.ndarray, x: DiffTensor) -> DiffTensor:
    """const @ x for a constant matrix"""
    c = np.asarray(const, dtype=x.dtype)
    return DiffTensor.from_op(c @ x.values, 'matmul_left_const', (x,), lambda g: (c.T @ g,))


def frobenius_distance(x: DiffTensor, target: np.ndarray) -> DiffTensor:
    diff = x.values - np.asarray(target, dtype=x.dtype)
    norm = np.sqrt(np.sum(diff ** 2))

    def backward_fn(g):
        if norm == 0.0:
            return (np.zeros_like(diff),)
        return (g * diff / norm,)

    return DiffTensor.from_op(np.asarray(norm, dtype=x.dtype), 'frobenius_distance', (x,), backward_fn)


def sixd_to_matrix(d: DiffTensor) -> DiffTensor:
    """6 values -> 3 x 3 rotation via Gram-Schmidt, columns (c1, c2, c1 x c2)"""
    values = d.values.astype(np.float64).reshape(-1)
    c1, c2, c3, na, nu = sixd_columns(values)
    b = values[3:]
    out = np.stack([c1, c2, c3], axis=1)

    def backward_fn(g):
        g = g.astype(np.float64)
        g1 = g[:, 0] + np.cross(c2, g[:, 2])
        g2 = g[:, 1] + np.cross(g[:, 2], c1)
        g_u = (g2 - c2 * np.dot(c2, g2)) / nu
        g_b = g_u - c1 * np.dot(c1, g_u)
        g1 = g1 - b * np.dot(c1, g_u) - np.dot(c1, b) * g_u
        g_a = (g1 - c1 * np.dot(c1, g1)) / na
        return (np.concatenate([g_a, g_b]).reshape(d.shape).astype(d.dtype),)

    return DiffTensor.from_op(out.astype(d.dtype), 'sixd_to_matrix', (d,), backward_fn)
