"""Image-plane geometry for the gimbal/strapdown camera interception model.

Normalized image coordinates are pixel coordinates divided by the focal length
in pixels. The image x axis points right, y points down, and the origin is the
image centre. All angles are radians.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import DomainError, InvalidInputError, SingularityError

logger = logging.getLogger(__name__)

# Distance (rad) kept from the tangent singularity of the pitch correction.
SINGULARITY_MARGIN = 0.05


def _require_finite(*values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise InvalidInputError(f"non-finite input: {value!r}")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; ``focal_px`` is the focal length in pixel units."""

    focal_px: float
    image_width: int
    image_height: int

    def __post_init__(self):
        _require_finite(self.focal_px)
        if self.focal_px <= 0:
            raise DomainError(f"focal_px must be > 0, got {self.focal_px}")
        if self.image_width <= 0 or self.image_height <= 0:
            raise DomainError(f"image size must be positive, got {self.image_width}x{self.image_height}")


@dataclass(frozen=True)
class NormalizedImagePoint:
    x: float
    y: float

    def __post_init__(self):
        _require_finite(self.x, self.y)

    def in_roi(self, bound: float = 1.0) -> bool:
        return abs(self.x) <= bound and abs(self.y) <= bound

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class StrapdownAttitude:
    """Roll and pitch of the strapdown camera; pitch includes the installation angle."""

    roll: float
    pitch: float

    def __post_init__(self):
        _require_finite(self.roll, self.pitch)
        if abs(self.pitch) >= math.pi / 2:
            raise SingularityError(f"|pitch| must be < pi/2, got {self.pitch}")

    @classmethod
    def from_degrees(cls, roll_deg: float, pitch_deg: float) -> "StrapdownAttitude":
        return cls(roll=math.radians(roll_deg), pitch=math.radians(pitch_deg))


@dataclass(frozen=True)
class CameraVelocity:
    """Linear (m/s) and angular (rad/s) velocity of the gimbal camera in its own frame."""

    v: Tuple[float, float, float]
    w: Tuple[float, float, float]

    def __post_init__(self):
        if len(self.v) != 3 or len(self.w) != 3:
            raise InvalidInputError("v and w must have three components each")
        _require_finite(*self.v, *self.w)

    def as_array(self) -> np.ndarray:
        return np.array([*self.v, *self.w], dtype=float)

    def reduced(self) -> np.ndarray:
        """(v_x, v_y, v_z, w_y): the components the reduced Jacobian acts on."""
        return np.array([self.v[0], self.v[1], self.v[2], self.w[1]], dtype=float)


def normalize_pixel(p_px: Sequence[float], intr: CameraIntrinsics) -> NormalizedImagePoint:
    px, py = float(p_px[0]), float(p_px[1])
    _require_finite(px, py)
    return NormalizedImagePoint(px / intr.focal_px, py / intr.focal_px)


def denormalize_pixel(p: NormalizedImagePoint, intr: CameraIntrinsics) -> Tuple[float, float]:
    return p.x * intr.focal_px, p.y * intr.focal_px


def _rotate(x: float, y: float, angle: float) -> Tuple[float, float]:
    c, s = math.cos(angle), math.sin(angle)
    return x * c - y * s, x * s + y * c


def _guarded_tan(angle: float) -> float:
    if abs(angle) >= math.pi / 2 - SINGULARITY_MARGIN:
        raise SingularityError(
            f"pitch correction angle {angle:.6f} rad within {SINGULARITY_MARGIN} rad of the tangent singularity"
        )
    return math.tan(angle)


def strapdown_to_gimbal(p_s: NormalizedImagePoint, att: StrapdownAttitude) -> NormalizedImagePoint:
    """Express a strapdown-camera image point in the image of an equivalent gimbal camera.

    The roll rotation is applied first; the pitch is then removed along the
    image y axis through ``tan(arctan(y1) - pitch)``.
    """
    x1, y1 = _rotate(p_s.x, p_s.y, att.roll)
    y_g = _guarded_tan(math.atan(y1) - att.pitch)
    return NormalizedImagePoint(x1, y_g)


def gimbal_to_strapdown(p_g: NormalizedImagePoint, att: StrapdownAttitude) -> NormalizedImagePoint:
    """Inverse of :func:`strapdown_to_gimbal`."""
    y1 = _guarded_tan(math.atan(p_g.y) + att.pitch)
    x_s, y_s = _rotate(p_g.x, y1, -att.roll)
    return NormalizedImagePoint(x_s, y_s)


def _check_depth(c_z: float) -> None:
    _require_finite(c_z)
    if c_z <= 0:
        raise DomainError(f"object distance c_z must be > 0, got {c_z}")


def image_jacobian_full(p: NormalizedImagePoint, c_z: float) -> np.ndarray:
    """2x6 interaction matrix acting on (v_x, v_y, v_z, w_x, w_y, w_z)."""
    _check_depth(c_z)
    x, y = p.x, p.y
    return np.array(
        [
            [-1.0 / c_z, 0.0, x / c_z, x * y, -(1.0 + x * x), y],
            [0.0, -1.0 / c_z, y / c_z, 1.0 + y * y, -x * y, -x],
        ]
    )


def image_jacobian_reduced(p: NormalizedImagePoint, c_z: float) -> np.ndarray:
    """2x4 interaction matrix with w_x = w_z = 0, acting on (v_x, v_y, v_z, w_y)."""
    _check_depth(c_z)
    x, y = p.x, p.y
    return np.array(
        [
            [-1.0 / c_z, 0.0, x / c_z, -(1.0 + x * x)],
            [0.0, -1.0 / c_z, y / c_z, -x * y],
        ]
    )


def image_point_dynamics(p: NormalizedImagePoint, c_z: float, u4: Sequence[float]) -> np.ndarray:
    """Rate of the normalized image point under the reduced camera velocity ``u4``."""
    u = np.asarray(u4, dtype=float)
    if u.shape != (4,):
        raise InvalidInputError(f"u4 must have 4 components, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("u4 contains non-finite values")
    return image_jacobian_reduced(p, c_z) @ u


def max_hit_offset(r: float, c_z: float) -> float:
    """Largest normalized offset that still hits a target of inscribed radius ``r`` at distance ``c_z``."""
    _require_finite(r, c_z)
    if r <= 0 or c_z <= 0:
        raise DomainError(f"r and c_z must be > 0, got r={r}, c_z={c_z}")
    return r / c_z
