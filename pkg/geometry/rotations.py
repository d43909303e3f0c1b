"""
Closed-form SO(3) math for the viewpoint / in-plane factorization.

Conventions:
    - A direction v has inclination theta = arccos(v_z) and azimuth
      phi = atan2(v_y, v_x) wrapped to [0, 2*pi); with these,
      viewpoint_rotation(phi, theta) maps the zenith (0, 0, 1) onto v.
    - At the poles (theta within 1e-9 of 0 or pi) phi is pinned to 0.
    - Bin indices are zero based; bin centres sit at (index + 0.5) / count.
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from common.errors import DegenerateInputError, InvalidArgumentError

TWO_PI = 2.0 * math.pi
ORTHO_TOL = 1e-9
UNIT_TOL = 1e-6
POLE_EPS = 1e-9
DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class Rotation:
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise InvalidArgumentError(f"Rotation must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidArgumentError("Rotation contains non-finite entries")
        if np.max(np.abs(m.T @ m - np.eye(3))) > ORTHO_TOL:
            raise InvalidArgumentError("Rotation is not orthonormal")
        if abs(np.linalg.det(m) - 1.0) > ORTHO_TOL:
            raise InvalidArgumentError("Rotation determinant is not +1")
        m.setflags(write=False)
        object.__setattr__(self, 'm', m)

    @classmethod
    def identity(cls) -> 'Rotation':
        return cls(np.eye(3))

    def __matmul__(self, other: 'Rotation') -> 'Rotation':
        return Rotation(self.m @ other.m)

    @property
    def T(self) -> 'Rotation':
        return Rotation(self.m.T)

    @property
    def zenith(self) -> np.ndarray:
        """Third column: where the canonical zenith lands"""
        return self.m[:, 2].copy()

    def flat(self) -> Tuple[float, ...]:
        return tuple(float(x) for x in self.m.reshape(-1))


@dataclass(frozen=True)
class ViewpointAngles:
    phi: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.phi) and math.isfinite(self.theta)):
            raise InvalidArgumentError("Viewpoint angles must be finite")
        if not 0.0 <= self.phi < TWO_PI:
            raise InvalidArgumentError(f"phi={self.phi} outside [0, 2pi)")
        if not 0.0 <= self.theta <= math.pi:
            raise InvalidArgumentError(f"theta={self.theta} outside [0, pi]")


@dataclass(frozen=True)
class UnitVector:
    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64).reshape(-1)
        if v.shape != (3,) or not np.all(np.isfinite(v)):
            raise InvalidArgumentError("UnitVector needs three finite components")
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise InvalidArgumentError(f"Vector norm {np.linalg.norm(v):.9f} is not 1")
        object.__setattr__(self, 'v', v)


def _check_angle(angle: float) -> float:
    angle = float(angle)
    if not math.isfinite(angle):
        raise InvalidArgumentError(f"Rotation angle must be finite, got {angle}")
    return angle


def rot_z(angle: float) -> Rotation:
    a = _check_angle(angle)
    c, s = math.cos(a), math.sin(a)
    return Rotation(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


def rot_y(angle: float) -> Rotation:
    a = _check_angle(angle)
    c, s = math.cos(a), math.sin(a)
    return Rotation(np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]))


def directions_to_angles(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized (phi, theta) for unit directions of shape (N, 3)"""
    v = np.asarray(v, dtype=np.float64)
    theta = np.arccos(np.clip(v[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(v[:, 1], v[:, 0]), TWO_PI)
    # mod can round a tiny negative angle up to exactly 2*pi
    phi[phi >= TWO_PI] = 0.0
    pole = (theta < POLE_EPS) | (theta > math.pi - POLE_EPS)
    phi[pole] = 0.0
    return phi, theta


def angles_to_bins(phi: np.ndarray, theta: np.ndarray, H: int, W: int) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized bin lookup; inverse of the bin-centre decoders"""
    h = np.minimum(np.floor(np.asarray(theta) / math.pi * H).astype(np.int64), H - 1)
    w = np.mod(np.floor(np.asarray(phi) / TWO_PI * W).astype(np.int64), W)
    return np.maximum(h, 0), w


def viewpoint_from_direction(v) -> ViewpointAngles:
    u = v.v if isinstance(v, UnitVector) else UnitVector(v).v
    phi, theta = directions_to_angles(u.reshape(1, 3))
    return ViewpointAngles(float(phi[0]), float(theta[0]))


def direction_of_angles(a: ViewpointAngles) -> np.ndarray:
    st = math.sin(a.theta)
    return np.array([math.cos(a.phi) * st, math.sin(a.phi) * st, math.cos(a.theta)])


def viewpoint_rotation(a: ViewpointAngles) -> Rotation:
    return rot_z(a.phi) @ rot_y(a.theta)


def decompose(r: Rotation) -> Tuple[Rotation, Rotation]:
    """Split r into (R_vp, R_ip) with R_vp @ R_ip == r"""
    v = r.zenith
    r_vp = viewpoint_rotation(viewpoint_from_direction(v / np.linalg.norm(v)))
    r_ip = Rotation(r_vp.m.T @ r.m)
    return r_vp, r_ip


def zyz_angles(r: Rotation) -> Tuple[float, float, float]:
    """(phi, theta, beta) where beta is the angle of R_ip about the zenith"""
    r_vp, r_ip = decompose(r)
    a = viewpoint_from_direction(r.zenith / np.linalg.norm(r.zenith))
    beta = math.atan2(r_ip.m[1, 0], r_ip.m[0, 0]) % TWO_PI
    return a.phi, a.theta, beta


def sixd_columns(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float, float]:
    """Gram-Schmidt on a 6D vector; also returns the two norms used.

    Shared with the differentiable op in tensorcore so both paths agree.
    """
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if d.shape != (6,) or not np.all(np.isfinite(d)):
        raise DegenerateInputError("6D representation needs six finite values",
                                   diagnostics={'input': d.tolist()})
    a, b = d[:3], d[3:]
    na = float(np.linalg.norm(a))
    if na < DEGENERATE_EPS:
        raise DegenerateInputError("First 6D triple is zero", diagnostics={'input': d.tolist()})
    c1 = a / na
    u = b - np.dot(c1, b) * c1
    nu = float(np.linalg.norm(u))
    if nu < DEGENERATE_EPS:
        raise DegenerateInputError("Second 6D triple is parallel to the first",
                                   diagnostics={'input': d.tolist(), 'residual_norm': nu})
    c2 = u / nu
    c3 = np.cross(c1, c2)
    return c1, c2, c3, na, nu


def sixd_to_rotation(d) -> Rotation:
    c1, c2, c3, _, _ = sixd_columns(d)
    return Rotation(np.stack([c1, c2, c3], axis=1))


def geodesic_degrees(a: Rotation, b: Rotation) -> float:
    cos_angle = (np.trace(a.m.T @ b.m) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, cos_angle))))


def _check_bin(index: int, count: int, label: str) -> None:
    if count < 1 or not 0 <= index < count:
        raise InvalidArgumentError(f"{label} bin {index} out of range for {count} bins")


def decode_azimuth(w_max: int, W: int) -> float:
    _check_bin(w_max, W, 'azimuth')
    return (w_max + 0.5) / W * TWO_PI


def decode_inclination(h_max: int, H: int) -> float:
    _check_bin(h_max, H, 'inclination')
    return (h_max + 0.5) / H * math.pi


def bins_of_angles(a: ViewpointAngles, H: int, W: int) -> Tuple[int, int]:
    h, w = angles_to_bins(np.array([a.phi]), np.array([a.theta]), H, W)
    return int(h[0]), int(w[0])


def random_rotation(rng: np.random.Generator) -> Rotation:
    return Rotation(ScipyRotation.random(random_state=rng).as_matrix())
