"""
VI-Net assembly: spherical maps -> Spherical FPN -> V-Branch -> feature
transformation -> I-Branch, with R = R_vp @ R_ip.

R_vp comes out of an argmax, so it enters the feature transformation and the
final product as a constant; the in-plane loss reaches the encoder and the
I-Branch only.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from common.errors import InvalidArgumentError
from configs.app import NetworkConfig
from geometry.rotations import Rotation, decompose, viewpoint_from_direction, bins_of_angles
from network.branches import (
    DirectRotationHead,
    IBranch,
    VBranch,
    ViewpointDistribution,
    matrix_rotation,
    transform_features,
)
from network.fpn import SphericalFPN
from sphermap.convert import PointCloud, to_spherical_map
from tensorcore import ops
from tensorcore.module import Module
from tensorcore.tensor import DiffTensor

logger = logging.getLogger(__name__)


@dataclass
class VINetOutput:
    rotation: Rotation
    r_matrix: DiffTensor
    viewpoint: Optional[ViewpointDistribution]
    r_ip: Optional[Rotation]
    r_ip_matrix: Optional[DiffTensor]


class VINet(Module):
    def __init__(self, config: NetworkConfig, rng: np.random.Generator):
        dtype = np.dtype(config.dtype)
        conv_opts = {'spherical_padding': config.spherical_padding, 'symmetric': config.symmetric}
        self.config = config
        self.fpn = SphericalFPN(config.stream_channels, config.stage_widths, config.channels, rng,
                                dtype, smoothing=config.fpn_smoothing, **conv_opts)
        if config.rotation_head == 'direct':
            self.direct = DirectRotationHead(config.channels, config.vp_channels, rng, dtype)
        else:
            self.v_branch = VBranch(config.channels, config.vp_channels, rng, dtype, mode=config.v_branch_mode)
            self.i_branch = IBranch(config.channels, rng, depth=config.i_branch_depth, dtype=dtype, **conv_opts)
        self.assign_names()
        logger.info(f"Built VI-Net ({config.profile}, head={config.rotation_head}) "
                    f"with {self.parameter_count()} parameters")

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def spherical_inputs(self, cloud: PointCloud) -> List[np.ndarray]:
        cfg = self.config
        return [to_spherical_map(cloud, s, cfg.input_height, cfg.input_width).data.astype(self.dtype)
                for s in cfg.streams]

    def forward_maps(self, maps: Sequence[np.ndarray]) -> VINetOutput:
        cfg = self.config
        for m in maps:
            if tuple(m.shape[1:]) != (cfg.input_height, cfg.input_width):
                raise InvalidArgumentError(
                    f"Map resolution {m.shape[1:]} does not match network input "
                    f"{cfg.input_height}x{cfg.input_width}")
        S = self.fpn([DiffTensor(np.asarray(m, dtype=self.dtype)) for m in maps])

        if cfg.rotation_head == 'direct':
            r_matrix = self.direct(S)
            return VINetOutput(matrix_rotation(r_matrix), r_matrix, None, None, None)

        dist = self.v_branch(S)
        S_ip = transform_features(S, dist.r_vp, cfg.k_neighbors) if cfg.feature_transform else S
        r_ip_matrix = self.i_branch(S_ip)
        r_ip = matrix_rotation(r_ip_matrix)
        r_matrix = ops.matmul_left_const(dist.r_vp.m, r_ip_matrix)
        return VINetOutput(dist.r_vp @ r_ip, r_matrix, dist, r_ip, r_ip_matrix)

    def __call__(self, cloud: PointCloud) -> VINetOutput:
        return self.forward_maps(self.spherical_inputs(cloud))


def vi_net_forward(model: VINet, cloud: PointCloud) -> Tuple[Rotation, Optional[ViewpointDistribution], Optional[Rotation]]:
    out = model(cloud)
    return out.rotation, out.viewpoint, out.r_ip


def predicted_bins(out: VINetOutput, H: int, W: int) -> Tuple[int, int]:
    """Viewpoint bins of a prediction; the direct head is binned from its zenith"""
    if out.viewpoint is not None:
        return out.viewpoint.h_max, out.viewpoint.w_max
    r_vp, _ = decompose(out.rotation)
    return bins_of_angles(viewpoint_from_direction(r_vp.zenith), H, W)


def architecture_header(config: NetworkConfig) -> Dict[str, str]:
    """Key=value description stored in checkpoints and compared on load"""
    fields = config.model_dump()
    header = {'format': 'vinet'}
    for key in sorted(fields):
        value = fields[key]
        if isinstance(value, list):
            value = ','.join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        header[key] = str(value)
    return header
