"""
Spherical FPN encoder.

Every convolution is a spa_sconv. Each input stream gets its own
ResNet-shaped encoder (stem at stride 2, then stages of two residual blocks
with stride-2 downsampling between stages); stage outputs are concatenated
across streams and merged top-down with 1x1 laterals and nearest 2x
upsampling. The result sits at half the input resolution.
"""
import logging
from typing import List, Sequence

import numpy as np

from common.errors import InvalidArgumentError
from spa_sconv.layer import SpaConvLayer
from tensorcore import ops
from tensorcore.module import Module
from tensorcore.tensor import DiffTensor, Parameter

logger = logging.getLogger(__name__)


class ChannelNorm(Module):
    """Instance standardization with a learned per-channel gain and shift"""

    def __init__(self, channels: int, dtype=np.float64):
        self.gain = Parameter(np.ones(channels, dtype=dtype))
        self.shift = Parameter.zeros((channels,), dtype)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return ops.instance_standardize(x, self.gain, self.shift)


def _conv(c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int, dtype, conv_opts) -> SpaConvLayer:
    return SpaConvLayer(c_in, c_out, k, rng, stride=stride, dtype=dtype, **conv_opts)


class ResidualBlock(Module):
    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator, dtype=np.float64, **conv_opts):
        self.conv1 = _conv(c_in, c_out, 3, rng, stride, dtype, conv_opts)
        self.norm1 = ChannelNorm(c_out, dtype)
        self.conv2 = _conv(c_out, c_out, 3, rng, 1, dtype, conv_opts)
        self.norm2 = ChannelNorm(c_out, dtype)
        self.shortcut = None
        self.shortcut_norm = None
        if stride != 1 or c_in != c_out:
            self.shortcut = _conv(c_in, c_out, 1, rng, stride, dtype, conv_opts)
            self.shortcut_norm = ChannelNorm(c_out, dtype)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        out = ops.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        identity = x if self.shortcut is None else self.shortcut_norm(self.shortcut(x))
        return ops.relu(ops.add(out, identity))


class StreamEncoder(Module):
    def __init__(self, c_in: int, stage_widths: Sequence[int], rng: np.random.Generator,
                 dtype=np.float64, **conv_opts):
        self.stem = _conv(c_in, stage_widths[0], 3, rng, 2, dtype, conv_opts)
        self.stem_norm = ChannelNorm(stage_widths[0], dtype)
        self.stages = []
        prev = stage_widths[0]
        for i, width in enumerate(stage_widths):
            stride = 1 if i == 0 else 2
            self.stages.append([
                ResidualBlock(prev, width, stride, rng, dtype, **conv_opts),
                ResidualBlock(width, width, 1, rng, dtype, **conv_opts),
            ])
            prev = width

    def __call__(self, x: DiffTensor) -> List[DiffTensor]:
        out = ops.relu(self.stem_norm(self.stem(x)))
        features = []
        for blocks in self.stages:
            for block in blocks:
                out = block(out)
            features.append(out)
        return features


class SphericalFPN(Module):
    def __init__(self, stream_channels: Sequence[int], stage_widths: Sequence[int], channels: int,
                 rng: np.random.Generator, dtype=np.float64, smoothing: bool = True, **conv_opts):
        self.encoders = [StreamEncoder(c, stage_widths, rng, dtype, **conv_opts) for c in stream_channels]
        n = len(stream_channels)
        self.laterals = [_conv(n * w, channels, 1, rng, 1, dtype, conv_opts) for w in stage_widths]
        self.smooth = _conv(channels, channels, 3, rng, 1, dtype, conv_opts) if smoothing else None
        self.channels = channels

    def __call__(self, maps: Sequence[DiffTensor]) -> DiffTensor:
        return spherical_fpn(self, maps)


def spherical_fpn(fpn: SphericalFPN, maps: Sequence[DiffTensor]) -> DiffTensor:
    if len(maps) != len(fpn.encoders):
        raise InvalidArgumentError(f"Expected {len(fpn.encoders)} stream maps, got {len(maps)}")
    resolutions = {m.shape[1:] for m in maps}
    if len(resolutions) != 1:
        raise InvalidArgumentError(f"Stream maps disagree on resolution: {sorted(resolutions)}")

    per_stream = [encoder(m) for encoder, m in zip(fpn.encoders, maps)]
    stages = [ops.concat([feats[i] for feats in per_stream], axis=0) for i in range(len(fpn.laterals))]

    out = fpn.laterals[-1](stages[-1])
    for i in range(len(stages) - 2, -1, -1):
        out = ops.add(fpn.laterals[i](stages[i]), ops.upsample_nearest(out, 2))
    if fpn.smooth is not None:
        out = fpn.smooth(out)
    return out
