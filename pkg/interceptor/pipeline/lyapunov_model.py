"""Quadratic Lyapunov candidates, their D-functions and the decrease-rate shaping W.

The two image axes are designed separately: V_x = px^2/2 and V_y = py^2/2, each
with its own D-function (the derivative of V along the image-point dynamics).
The array kernels accept numpy arrays and broadcast; the scalar operations on
``InterceptState`` delegate to them.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
from pydantic import BaseModel, model_validator

from .errors import DomainError, InvalidInputError

logger = logging.getLogger(__name__)


class Axis(str, Enum):
    """Image axis a policy/dataset is responsible for."""

    X = "x"
    Y = "y"

    @property
    def coordinate_index(self) -> int:
        return 0 if self is Axis.X else 1


# Column order of state arrays throughout the package.
STATE_FIELDS = ("px", "py", "vz", "cz", "wy")


@dataclass(frozen=True)
class InterceptState:
    px: float
    py: float
    vz: float
    cz: float
    wy: float

    def __post_init__(self):
        values = (self.px, self.py, self.vz, self.cz, self.wy)
        if not all(math.isfinite(v) for v in values):
            raise InvalidInputError(f"non-finite state: {values}")
        if self.cz <= 0:
            raise DomainError(f"cz must be > 0, got {self.cz}")

    def coordinate(self, axis: Axis) -> float:
        return self.px if axis is Axis.X else self.py

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.vz, self.cz, self.wy], dtype=float)

    @classmethod
    def from_array(cls, row) -> "InterceptState":
        return cls(*(float(v) for v in row))


@dataclass(frozen=True)
class ControlInput:
    """Lateral velocity command (vx, vy) in m/s, as the two axis policies emit it."""

    vx: float
    vy: float

    def __post_init__(self):
        if not (math.isfinite(self.vx) and math.isfinite(self.vy)):
            raise InvalidInputError(f"non-finite command: vx={self.vx}, vy={self.vy}")


class Interval(BaseModel):
    lo: float
    hi: float

    @model_validator(mode="after")
    def _ordered(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("interval bounds must be finite")
        if self.lo >= self.hi:
            raise ValueError(f"interval lower bound {self.lo} must be < upper bound {self.hi}")
        return self

    def contains(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return (values >= self.lo) & (values <= self.hi)

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.hi - self.lo)


class Roi(BaseModel):
    """State box over which data is generated and stability is checked."""

    px: Interval = Interval(lo=-1.0, hi=1.0)
    py: Interval = Interval(lo=-1.0, hi=1.0)
    wy: Interval = Interval(lo=-0.2, hi=0.2)
    vz: Interval = Interval(lo=0.1, hi=15.0)
    cz: Interval = Interval(lo=0.5, hi=50.0)

    def interval(self, field: str) -> Interval:
        return getattr(self, field)

    def bounds_array(self) -> np.ndarray:
        """(5, 2) array of [lo, hi] in STATE_FIELDS order."""
        return np.array([[self.interval(f).lo, self.interval(f).hi] for f in STATE_FIELDS])

    def contains(self, states) -> np.ndarray:
        """Row-wise membership for an (n, 5) state array."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        bounds = self.bounds_array()
        return np.all((states >= bounds[:, 0]) & (states <= bounds[:, 1]), axis=1)


def _check_cz(cz) -> None:
    if np.any(np.asarray(cz) <= 0):
        raise DomainError("cz must be > 0")


def lyapunov_v(px: float, py: float) -> Tuple[float, float, float]:
    v_x = 0.5 * px * px
    v_y = 0.5 * py * py
    return v_x, v_y, v_x + v_y


def w_value(p):
    """W(p) = p^2; works elementwise on arrays."""
    return p * p


def decrease_target(p, eta: float):
    """The D value the dataset search aims for: -eta * W(p)."""
    return -eta * w_value(p)


def d_x_values(px, vz, cz, wy, vx):
    _check_cz(cz)
    return px * (-vx / cz + vz * px / cz - (1.0 + px * px) * wy)


def d_y_values(px, py, vz, cz, wy, vy):
    _check_cz(cz)
    return py * (-vy / cz + vz * py / cz - px * py * wy)


def d_values(axis: Axis, states: np.ndarray, u) -> np.ndarray:
    """D for an (n, 5) state array and n inputs along ``axis``."""
    px, py, vz, cz, wy = (states[:, i] for i in range(5))
    if axis is Axis.X:
        return d_x_values(px, vz, cz, wy, u)
    return d_y_values(px, py, vz, cz, wy, u)


def d_x(s: InterceptState, vx: float) -> float:
    return float(d_x_values(s.px, s.vz, s.cz, s.wy, vx))


def d_y(s: InterceptState, vy: float) -> float:
    return float(d_y_values(s.px, s.py, s.vz, s.cz, s.wy, vy))


def d_axis(axis: Axis, s: InterceptState, u: float) -> float:
    return d_x(s, u) if axis is Axis.X else d_y(s, u)
