"""
Rotation heads on top of the spherical feature map S (C x H x W).

VBranch locates the canonical zenith by classifying azimuth and inclination
bins; transform_features resamples S as seen from that zenith; IBranch
regresses the remaining rotation through the 6D representation.
DirectRotationHead is the undecomposed baseline.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from common.errors import InvalidArgumentError
from geometry.rotations import (
    Rotation,
    ViewpointAngles,
    angles_to_bins,
    decode_azimuth,
    decode_inclination,
    sixd_to_rotation,
    viewpoint_from_direction,
    viewpoint_rotation,
)
from network.anchors import anchor_grid
from spa_sconv.layer import SpaConvLayer
from tensorcore import ops
from tensorcore.module import MLP, Module, pointwise
from tensorcore.tensor import DiffTensor

logger = logging.getLogger(__name__)

COPY_EPS = 1e-9
V_BRANCH_MODES = ('two_branch', 'one_branch', 'regression')


@dataclass
class ViewpointDistribution:
    """Viewpoint head output.

    y_phi / y_theta are per-bin sigmoid scores (W and H of them). one_branch
    mode also fills y_joint (H*W); regression mode fills r_vp_matrix, the raw
    differentiable 3 x 3 prediction, and its scores are the argmax indicators.
    """
    y_phi: DiffTensor
    y_theta: DiffTensor
    w_max: int
    h_max: int
    r_vp: Rotation
    y_joint: Optional[DiffTensor] = None
    r_vp_matrix: Optional[DiffTensor] = None


def _argmax(values: np.ndarray) -> int:
    return int(np.argmax(values))


def rotation_of_bins(h_max: int, w_max: int, H: int, W: int) -> Rotation:
    return viewpoint_rotation(ViewpointAngles(decode_azimuth(w_max, W), decode_inclination(h_max, H)))


class VBranch(Module):
    def __init__(self, channels: int, vp_channels: int, rng: np.random.Generator,
                 dtype=np.float64, mode: str = 'two_branch'):
        if mode not in V_BRANCH_MODES:
            raise InvalidArgumentError(f"Unknown V-Branch mode '{mode}'")
        self.mode = mode
        if mode == 'regression':
            self.regressor = MLP(channels, vp_channels, 6, rng, dtype)
            return
        self.lift = MLP(channels, vp_channels, vp_channels, rng, dtype)
        if mode == 'two_branch':
            self.head_phi = MLP(vp_channels, vp_channels, 1, rng, dtype)
            self.head_theta = MLP(vp_channels, vp_channels, 1, rng, dtype)
        else:
            self.head_joint = MLP(vp_channels, vp_channels, 1, rng, dtype)

    def __call__(self, S: DiffTensor) -> ViewpointDistribution:
        return v_branch(self, S)


def _bin_scores(head: MLP, pooled: DiffTensor) -> DiffTensor:
    """C_vp x N pooled features -> N sigmoid scores"""
    per_bin = head(ops.transpose(pooled, (1, 0)))
    return ops.sigmoid(ops.reshape(per_bin, (pooled.shape[1],)))


def v_branch(branch: VBranch, S: DiffTensor) -> ViewpointDistribution:
    _, H, W = S.shape
    if branch.mode == 'regression':
        return _regress_viewpoint(branch, S)

    S_vp = pointwise(branch.lift, S)
    if branch.mode == 'two_branch':
        y_phi = _bin_scores(branch.head_phi, ops.axis_max_pool(S_vp, axis=1))
        y_theta = _bin_scores(branch.head_theta, ops.axis_max_pool(S_vp, axis=2))
        w_max, h_max = _argmax(y_phi.values), _argmax(y_theta.values)
        return ViewpointDistribution(y_phi, y_theta, w_max, h_max, rotation_of_bins(h_max, w_max, H, W))

    flat = ops.reshape(S_vp, (S_vp.shape[0], H * W))
    y_joint = _bin_scores(branch.head_joint, flat)
    grid = ops.reshape(y_joint, (H, W))
    q = _argmax(y_joint.values)
    h_max, w_max = divmod(q, W)
    return ViewpointDistribution(ops.axis_max_pool(grid, axis=0), ops.axis_max_pool(grid, axis=1),
                                 w_max, h_max, rotation_of_bins(h_max, w_max, H, W), y_joint=y_joint)


def _regress_viewpoint(branch: VBranch, S: DiffTensor) -> ViewpointDistribution:
    _, H, W = S.shape
    raw = ops.sixd_to_matrix(branch.regressor(ops.global_avg_pool(S)))
    # keep only the zenith of the regressed rotation
    zenith = raw.values[:, 2].astype(np.float64)
    angles = viewpoint_from_direction(zenith / np.linalg.norm(zenith))
    h, w = angles_to_bins(np.array([angles.phi]), np.array([angles.theta]), H, W)
    h_max, w_max = int(h[0]), int(w[0])
    y_phi = DiffTensor(np.eye(W, dtype=S.dtype)[w_max])
    y_theta = DiffTensor(np.eye(H, dtype=S.dtype)[h_max])
    return ViewpointDistribution(y_phi, y_theta, w_max, h_max, viewpoint_rotation(angles), r_vp_matrix=raw)


def interpolation_plan(r_vp: Rotation, H: int, W: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Neighbour indices and normalized weights for transform_features.

    Rotated anchors g' = R_vp^T g are indexed by a KD-tree; each canonical
    anchor takes the inverse-square-distance average of its k nearest rotated
    anchors, or copies the nearest one when it is within COPY_EPS.
    """
    if k < 1 or k > H * W:
        raise InvalidArgumentError(f"Neighbour count k={k} must be in [1, {H * W}]")
    anchors = anchor_grid(H, W).directions
    rotated = anchors @ r_vp.m
    _, idx = cKDTree(rotated).query(anchors, k=list(range(1, k + 1)))
    idx = np.asarray(idx, dtype=np.int64)
    d2 = np.sum((anchors[:, None, :] - rotated[idx]) ** 2, axis=-1)

    weights = np.empty_like(d2)
    exact = np.sqrt(d2[:, 0]) < COPY_EPS
    weights[exact] = 0.0
    weights[exact, 0] = 1.0
    inverse = 1.0 / d2[~exact]
    weights[~exact] = inverse / inverse.sum(axis=1, keepdims=True)
    return idx, weights


def transform_features(S: DiffTensor, r_vp: Rotation, k: int = 3) -> DiffTensor:
    _, H, W = S.shape
    idx, weights = interpolation_plan(r_vp, H, W, k)
    return ops.weighted_gather(S, idx, weights)


class IBranch(Module):
    def __init__(self, channels: int, rng: np.random.Generator, depth: int = 3, dtype=np.float64, **conv_opts):
        self.convs = [SpaConvLayer(channels, channels, 3, rng, stride=2, dtype=dtype, **conv_opts)
                      for _ in range(depth)]
        self.mlp = MLP(channels, channels, 6, rng, dtype)

    @property
    def depth(self) -> int:
        return len(self.convs)

    def __call__(self, S_ip: DiffTensor) -> DiffTensor:
        return i_branch(self, S_ip)


def i_branch(branch: IBranch, S_ip: DiffTensor) -> DiffTensor:
    """S_ip -> differentiable 3 x 3 rotation matrix"""
    _, H, W = S_ip.shape
    factor = 2 ** branch.depth
    if H % factor or W % factor:
        raise InvalidArgumentError(f"I-Branch needs a resolution divisible by {factor}, got {H}x{W}")
    x = S_ip
    for conv in branch.convs:
        x = ops.relu(conv(x))
    return ops.sixd_to_matrix(branch.mlp(ops.global_avg_pool(x)))


def matrix_rotation(matrix: DiffTensor) -> Rotation:
    """Re-orthonormalize a head output in float64"""
    m = matrix.values.astype(np.float64)
    return sixd_to_rotation(np.concatenate([m[:, 0], m[:, 1]]))


class DirectRotationHead(Module):
    """Undecomposed baseline: pooled S -> 6D -> rotation"""

    def __init__(self, channels: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.mlp = MLP(channels, hidden, 6, rng, dtype)

    def __call__(self, S: DiffTensor) -> DiffTensor:
        return ops.sixd_to_matrix(self.mlp(ops.global_avg_pool(S)))
