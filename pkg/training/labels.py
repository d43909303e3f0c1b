from dataclasses import dataclass

import numpy as np

from geometry.rotations import Rotation, bins_of_angles, viewpoint_from_direction, viewpoint_rotation


@dataclass(frozen=True)
class GtLabels:
    """One-hot viewpoint targets plus the ground-truth viewpoint rotation"""
    y_hat_phi: np.ndarray
    y_hat_theta: np.ndarray
    h: int
    w: int
    r_vp: Rotation

    def joint(self) -> np.ndarray:
        H, W = len(self.y_hat_theta), len(self.y_hat_phi)
        out = np.zeros(H * W)
        out[self.h * W + self.w] = 1.0
        return out


def make_gt_labels(r_hat: Rotation, H: int, W: int) -> GtLabels:
    angles = viewpoint_from_direction(r_hat.zenith)
    h, w = bins_of_angles(angles, H, W)
    y_phi = np.zeros(W)
    y_phi[w] = 1.0
    y_theta = np.zeros(H)
    y_theta[h] = 1.0
    return GtLabels(y_phi, y_theta, h, w, viewpoint_rotation(angles))
