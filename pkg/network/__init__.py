from network.anchors import AnchorGrid, anchor_grid
from network.branches import (
    DirectRotationHead,
    IBranch,
    VBranch,
    ViewpointDistribution,
    i_branch,
    interpolation_plan,
    transform_features,
    v_branch,
)
from network.fpn import ResidualBlock, SphericalFPN, StreamEncoder, spherical_fpn
from network.vinet import VINet, VINetOutput, architecture_header, predicted_bins, vi_net_forward
