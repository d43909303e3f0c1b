"""
Synthetic pose dataset.

A canonical template is the rigid union of a box, a cone and a sphere cap at
different offsets, so it has no rotational or mirror symmetry. Each sample is
the same template rotated by a uniformly random R_hat. Points keep a pseudo
colour derived from their canonical position, so colour is fixed per point
under rotation.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from common.errors import InvalidArgumentError
from common.seeding import named_rng
from geometry.rotations import Rotation, random_rotation
from sphermap.convert import RADIAL_STREAM, RGB_STREAM, PointCloud

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShapeParams:
    n_points: int = 2048
    box_size: Tuple[float, float, float] = (0.9, 0.5, 0.3)
    box_offset: Tuple[float, float, float] = (-0.15, 0.0, -0.1)
    cone_height: float = 0.6
    cone_radius: float = 0.2
    cone_offset: Tuple[float, float, float] = (0.3, 0.1, 0.05)
    cap_radius: float = 0.22
    cap_offset: Tuple[float, float, float] = (-0.35, -0.2, 0.05)
    fractions: Tuple[float, float, float] = (0.5, 0.25, 0.25)


@dataclass
class Sample:
    cloud: PointCloud
    gt_rotation: Rotation
    id: int
    cache: dict = field(default_factory=dict, repr=False, compare=False)


def _box_surface(rng: np.random.Generator, n: int, size, offset) -> np.ndarray:
    half = np.asarray(size) / 2.0
    pts = rng.uniform(-half, half, size=(n, 3))
    # snap one coordinate per point onto a face, picked by face area
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    sign = rng.choice([-1.0, 1.0], size=n)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts + np.asarray(offset)


def _cone_surface(rng: np.random.Generator, n: int, height: float, radius: float, offset) -> np.ndarray:
    t = np.sqrt(rng.uniform(0.0, 1.0, n))
    angle = rng.uniform(0.0, 2.0 * np.pi, n)
    r = radius * t
    pts = np.stack([r * np.cos(angle), r * np.sin(angle), height * (1.0 - t)], axis=1)
    return pts + np.asarray(offset)


def _cap_surface(rng: np.random.Generator, n: int, radius: float, offset) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 2] = np.abs(v[:, 2])
    return radius * v + np.asarray(offset)


def make_template(seed: int, params: ShapeParams = ShapeParams()) -> Tuple[np.ndarray, np.ndarray]:
    """Canonical (points, rgb) with the centroid at the origin and unit max radius"""
    rng = named_rng(seed, 'template')
    n_box = int(round(params.n_points * params.fractions[0]))
    n_cone = int(round(params.n_points * params.fractions[1]))
    n_cap = params.n_points - n_box - n_cone
    if min(n_box, n_cone, n_cap) < 1:
        raise InvalidArgumentError(f"Template needs points on every primitive, got {params}")
    parts = [
        _box_surface(rng, n_box, params.box_size, params.box_offset),
        _cone_surface(rng, n_cone, params.cone_height, params.cone_radius, params.cone_offset),
        _cap_surface(rng, n_cap, params.cap_radius, params.cap_offset),
    ]
    points = np.concatenate(parts, axis=0)
    points -= points.mean(axis=0)
    points /= np.max(np.linalg.norm(points, axis=1))

    base = np.array([[0.9, 0.3, 0.2], [0.2, 0.8, 0.3], [0.25, 0.35, 0.9]])
    part_of = np.repeat(np.arange(3), [n_box, n_cone, n_cap])
    rgb = np.clip(0.7 * base[part_of] + 0.15 * (points + 1.0), 0.0, 1.0)
    return points, rgb


def make_sample(template: Tuple[np.ndarray, np.ndarray], seed: int, index: int) -> Sample:
    points, rgb = template
    r_hat = random_rotation(named_rng(seed, 'data', index))
    rotated = points @ r_hat.m.T
    rotated -= rotated.mean(axis=0)
    cloud = PointCloud(rotated, {RADIAL_STREAM: np.linalg.norm(rotated, axis=1), RGB_STREAM: rgb})
    return Sample(cloud, r_hat, index)


def synth_dataset(seed: int, n: int, params: ShapeParams = ShapeParams(), threads: int = 1) -> List[Sample]:
    if n < 1:
        raise InvalidArgumentError(f"Dataset size must be >= 1, got {n}")
    template = make_template(seed, params)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        samples = list(pool.map(lambda i: make_sample(template, seed, i), range(n)))
    logger.info(f"Generated {n} synthetic samples (seed={seed}, points={params.n_points})")
    return samples
