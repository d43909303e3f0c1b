"""
Training objectives.

    L_vp = FL(y_phi, y_hat_phi) + FL(y_theta, y_hat_theta)
    L_ip = ||R_vp @ R_ip - R_hat||_F
    L    = L_ip + lambda * L_vp

The focal loss is a single fused op: probabilities are clamped to
[PROB_EPS, 1 - PROB_EPS] before the log and clamped entries get no gradient.
"""
from dataclasses import dataclass

import numpy as np

from common.errors import InvalidArgumentError
from geometry.rotations import Rotation
from network.branches import ViewpointDistribution
from tensorcore import ops
from tensorcore.tensor import DiffTensor
from training.labels import GtLabels

PROB_EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.5
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidArgumentError(f"Focal alpha must be in (0, 1], got {self.alpha}")
        if self.gamma < 0.0:
            raise InvalidArgumentError(f"Focal gamma must be >= 0, got {self.gamma}")


def focal_loss(y: DiffTensor, y_hat: np.ndarray, params: FocalParams = FocalParams()) -> DiffTensor:
    """Mean over M of -alpha * (1 - y_t)^gamma * log(y_t)"""
    y_hat = np.asarray(y_hat)
    if y.values.ndim != 1 or y.shape != y_hat.shape:
        raise InvalidArgumentError(f"focal_loss length mismatch: {y.shape} vs {y_hat.shape}")
    alpha, gamma = params.alpha, params.gamma
    positive = y_hat == 1
    raw = y.values.astype(np.float64)
    clamped = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    inside = (raw >= PROB_EPS) & (raw <= 1.0 - PROB_EPS)
    y_t = np.where(positive, clamped, 1.0 - clamped)
    miss = 1.0 - y_t
    log_t = np.log(y_t)
    m = len(y_t)
    loss = float(np.mean(-alpha * miss ** gamma * log_t))

    def backward_fn(g):
        if gamma == 0.0:
            d_term = -alpha / y_t
        else:
            d_term = alpha * (gamma * miss ** (gamma - 1.0) * log_t - miss ** gamma / y_t)
        sign = np.where(positive, 1.0, -1.0)
        grad = g * d_term * sign * inside / m
        return (grad.astype(y.dtype),)

    return DiffTensor.from_op(np.asarray(loss, dtype=y.dtype), 'focal_loss', (y,), backward_fn)


def viewpoint_loss(dist: ViewpointDistribution, gt: GtLabels, params: FocalParams = FocalParams()) -> DiffTensor:
    if dist.r_vp_matrix is not None:
        return ops.frobenius_distance(dist.r_vp_matrix, gt.r_vp.m)
    if dist.y_joint is not None:
        return focal_loss(dist.y_joint, gt.joint(), params)
    return ops.add(focal_loss(dist.y_phi, gt.y_hat_phi, params),
                   focal_loss(dist.y_theta, gt.y_hat_theta, params))


def rotation_loss(r: DiffTensor, r_hat: Rotation) -> DiffTensor:
    return ops.frobenius_distance(r, r_hat.m)


def total_loss(l_ip: DiffTensor, l_vp: DiffTensor, lam: float) -> DiffTensor:
    if lam < 0:
        raise InvalidArgumentError(f"Loss balance lambda must be >= 0, got {lam}")
    return ops.add(l_ip, ops.scale(l_vp, lam))
