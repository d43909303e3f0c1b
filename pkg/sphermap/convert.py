"""
Point cloud -> spherical signal map conversion.

Each (inclination, azimuth) region keeps the attributes of its point with the
largest radial distance; empty regions stay zero. Bin membership uses the
geometry package's angle and bin helpers so the two never disagree.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from common.errors import InvalidArgumentError
from geometry.rotations import angles_to_bins, directions_to_angles

logger = logging.getLogger(__name__)

RADIAL_STREAM = 'radial'
RGB_STREAM = 'rgb'


@dataclass
class PointCloud:
    points: np.ndarray
    attrs: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 1:
            raise InvalidArgumentError(f"PointCloud needs an N x 3 array with N >= 1, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise InvalidArgumentError("PointCloud coordinates must be finite")
        attrs = {}
        for name, values in self.attrs.items():
            values = np.asarray(values, dtype=np.float64)
            if values.ndim == 1:
                values = values[:, None]
            if values.shape[0] != len(self.points):
                raise InvalidArgumentError(
                    f"Stream '{name}' has {values.shape[0]} rows for {len(self.points)} points")
            attrs[name] = values
        self.attrs = attrs

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def catalog(self) -> List[Tuple[str, int]]:
        return [(name, values.shape[1]) for name, values in self.attrs.items()]


@dataclass
class SphericalMap:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise InvalidArgumentError(f"SphericalMap must be C x H x W, got {self.data.shape}")
        _, H, W = self.data.shape
        check_resolution(H, W)
        if not np.all(np.isfinite(self.data)):
            raise InvalidArgumentError("SphericalMap entries must be finite")

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def check_resolution(H: int, W: int) -> None:
    if H < 2 or W < 2:
        raise InvalidArgumentError(f"Spherical resolution must be at least 2x2, got {H}x{W}")
    if W % 2:
        raise InvalidArgumentError(f"Azimuth resolution must be even, got W={W}")


def normalize_cloud(points: np.ndarray, t, s) -> np.ndarray:
    """Centre on t and scale by the norm of the size vector s"""
    scale = float(np.linalg.norm(np.asarray(s, dtype=np.float64)))
    if not scale > 0.0:
        raise InvalidArgumentError("Size vector must have positive norm")
    return (np.asarray(points, dtype=np.float64) - np.asarray(t, dtype=np.float64)) / scale


def radial_distance_stream(cloud: PointCloud) -> np.ndarray:
    return np.linalg.norm(cloud.points, axis=1)[:, None]


def attach_stream(cloud: PointCloud, name: str, attrs: np.ndarray) -> PointCloud:
    merged = dict(cloud.attrs)
    merged[name] = attrs
    return PointCloud(cloud.points, merged)


def point_bins(points: np.ndarray, H: int, W: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(valid index, flat bin, radius) for every point off the origin"""
    radius = np.linalg.norm(points, axis=1)
    valid = np.nonzero(radius > 0.0)[0]
    dirs = points[valid] / radius[valid, None]
    phi, theta = directions_to_angles(dirs)
    h, w = angles_to_bins(phi, theta, H, W)
    return valid, h * W + w, radius[valid]


def to_spherical_map(cloud: PointCloud, stream: str, H: int = 64, W: int = 64) -> SphericalMap:
    check_resolution(H, W)
    if stream == RADIAL_STREAM and stream not in cloud.attrs:
        attrs = radial_distance_stream(cloud)
    elif stream in cloud.attrs:
        attrs = cloud.attrs[stream]
    else:
        raise InvalidArgumentError(f"Unknown stream '{stream}', cloud has {[n for n, _ in cloud.catalog]}")

    data = np.zeros((attrs.shape[1], H * W), dtype=np.float64)
    valid, flat_bin, radius = point_bins(cloud.points, H, W)
    if len(valid) == 0:
        logger.warning(f"All {cloud.n_points} points sit at the origin; '{stream}' map is empty")
        return SphericalMap(data.reshape(-1, H, W))

    # Sort by bin, then descending radius, then original index: the first
    # entry of each bin group is the winner.
    order = np.lexsort((valid, -radius, flat_bin))
    sorted_bins = flat_bin[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_bins[1:] != sorted_bins[:-1]
    winners = valid[order[first]]
    data[:, sorted_bins[first]] = attrs[winners].T
    return SphericalMap(data.reshape(-1, H, W))
