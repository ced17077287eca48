"""Sample-based almost-Lyapunov check of axis policies over a dense RoI slice.

A slice fixes vz and wy (and the other image coordinate) and sweeps the
policy's own image coordinate against cz. At every grid point the policy
command is fed into the exact D-function; positive D marks a violation.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .artifacts import PathLike, atomic_write, fmt_float
from .camera_geometry import max_hit_offset
from .errors import ConfigError
from .lyapunov_model import Axis, Interval, Roi, d_x_values, d_y_values, w_value

logger = logging.getLogger(__name__)

SIGN_EPS = 1e-12


class Policy(Protocol):
    def command(self, p, vz, cz) -> np.ndarray: ...


class ClosedFormPolicy:
    """The wy-agnostic oracle law u = clip((vz + eta*cz) * p, bounds)."""

    def __init__(self, eta: float = 2.0, bounds: Optional[Interval] = None):
        self.eta = eta
        self.bounds = bounds

    def command(self, p, vz, cz) -> np.ndarray:
        u = (np.asarray(vz, float) + self.eta * np.asarray(cz, float)) * np.asarray(p, float)
        if self.bounds is not None:
            u = np.clip(u, self.bounds.lo, self.bounds.hi)
        return u


class SweepRange(BaseModel):
    lo: float
    hi: float
    count: int = Field(ge=2)

    @model_validator(mode="after")
    def _ordered(self):
        if self.lo >= self.hi:
            raise ValueError(f"sweep lower bound {self.lo} must be < upper bound {self.hi}")
        return self

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)


class GridSpec(BaseModel):
    vz: float = 15.0
    wy: float = 0.0
    other_coordinate: float = 0.0
    p: SweepRange = SweepRange(lo=-1.0, hi=1.0, count=200)
    cz: SweepRange = SweepRange(lo=0.5, hi=50.0, count=200)

    def with_resolution(self, count: int) -> "GridSpec":
        return self.model_copy(update={
            "p": SweepRange(lo=self.p.lo, hi=self.p.hi, count=count),
            "cz": SweepRange(lo=self.cz.lo, hi=self.cz.hi, count=count),
        })

    def validate_against(self, roi: Roi, axis: Axis) -> None:
        own = roi.px if axis is Axis.X else roi.py
        other = roi.py if axis is Axis.X else roi.px
        checks = [
            ("p", self.p.lo >= own.lo and self.p.hi <= own.hi),
            ("cz", self.cz.lo >= roi.cz.lo and self.cz.hi <= roi.cz.hi),
            ("vz", bool(roi.vz.contains(self.vz))),
            ("wy", bool(roi.wy.contains(self.wy))),
            ("other_coordinate", bool(other.contains(self.other_coordinate))),
        ]
        bad = [name for name, ok in checks if not ok]
        if bad:
            raise ConfigError(f"grid leaves the RoI in: {', '.join(bad)}")


@dataclass
class RoaReport:
    """Grid evaluation of one axis; arrays are flattened in (p index, cz index) order."""

    axis: Axis
    grid: GridSpec
    p: np.ndarray
    cz: np.ndarray
    u: np.ndarray
    d: np.ndarray
    v: np.ndarray
    sign: np.ndarray

    def __len__(self) -> int:
        return len(self.d)

    @property
    def violation_fraction(self) -> float:
        return float(np.mean(self.sign > 0)) if len(self) else 0.0

    @property
    def boundary_fraction(self) -> float:
        return float(np.mean(self.sign == 0)) if len(self) else 0.0


@dataclass
class ViolationSummary:
    axis: str
    points: int
    violation_fraction: float
    boundary_fraction: float
    pockets: Dict[float, float] = field(default_factory=dict)
    cz_bins: List[float] = field(default_factory=list)
    max_cz_violation: Optional[float] = None
    max_violation_offset: float = 0.0

    def static_error_bound_at(self, cz: float = 1.0) -> float:
        """Largest |p| with D > 0 in the grid cz bin nearest to ``cz`` (0 if that bin is clean)."""
        if not self.cz_bins:
            return 0.0
        bins = np.asarray(self.cz_bins)
        nearest = float(bins[np.argmin(np.abs(bins - cz))])
        return self.pockets.get(nearest, 0.0)

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "points": self.points,
            "violation_fraction": self.violation_fraction,
            "boundary_fraction": self.boundary_fraction,
            "max_cz_violation": self.max_cz_violation,
            "max_violation_offset": self.max_violation_offset,
            "static_error_bound_at_1m": self.static_error_bound_at(1.0),
            "pockets": {fmt_float(k): v for k, v in sorted(self.pockets.items())},
        }


def _signs(d: np.ndarray) -> np.ndarray:
    return np.where(d > SIGN_EPS, 1, np.where(d < -SIGN_EPS, -1, 0)).astype(int)


def verify_axis(policy: Policy, axis: Axis, grid: GridSpec, roi: Optional[Roi] = None) -> RoaReport:
    grid.validate_against(roi or Roi(), axis)
    p_mesh, cz_mesh = np.meshgrid(grid.p.values(), grid.cz.values(), indexing="ij")
    p, cz = p_mesh.reshape(-1), cz_mesh.reshape(-1)
    vz = np.full_like(p, grid.vz)
    wy = np.full_like(p, grid.wy)
    u = np.asarray(policy.command(p, vz, cz), dtype=float).reshape(-1)
    if axis is Axis.X:
        d = d_x_values(p, vz, cz, wy, u)
    else:
        d = d_y_values(np.full_like(p, grid.other_coordinate), p, vz, cz, wy, u)
    report = RoaReport(axis, grid, p, cz, u, d, 0.5 * w_value(p), _signs(d))
    logger.info(f"VERIFY: {axis.value}-axis {grid.p.count}x{grid.cz.count} grid, "
                f"violations={report.violation_fraction:.2%}, boundary={report.boundary_fraction:.2%}")
    return report


def export_roa_csv(report: RoaReport, path: PathLike) -> None:
    g = report.grid
    with atomic_write(path) as handle:
        handle.write(f"# axis={report.axis.value}\n")
        handle.write(f"# fixed: vz={fmt_float(g.vz)} wy={fmt_float(g.wy)} other_coordinate={fmt_float(g.other_coordinate)}\n")
        handle.write("p,cz,u,D,V,sign\n")
        for row in zip(report.p, report.cz, report.u, report.d, report.v, report.sign):
            handle.write(",".join(fmt_float(x) for x in row[:5]) + f",{int(row[5])}\n")
    logger.info(f"VERIFY: wrote {len(report)} grid rows to {path}")


def violation_summary(report: RoaReport) -> ViolationSummary:
    if len(report) == 0:
        raise ConfigError("cannot summarise an empty report")
    bad = report.sign > 0
    pockets: Dict[float, float] = {}
    for cz_value in np.unique(report.cz[bad]):
        in_bin = bad & (report.cz == cz_value)
        pockets[float(cz_value)] = float(np.max(np.abs(report.p[in_bin])))
    return ViolationSummary(
        axis=report.axis.value,
        points=len(report),
        violation_fraction=report.violation_fraction,
        boundary_fraction=report.boundary_fraction,
        pockets=pockets,
        cz_bins=[float(c) for c in report.grid.cz.values()],
        max_cz_violation=float(np.max(report.cz[bad])) if np.any(bad) else None,
        max_violation_offset=float(np.max(np.abs(report.p[bad]))) if np.any(bad) else 0.0,
    )


def hit_check(summary: ViolationSummary, r: float, cz: float = 1.0) -> Tuple[float, float, bool]:
    """Compare the static-error bound at ``cz`` with the largest offset that still hits a target of radius ``r``."""
    bound = summary.static_error_bound_at(cz)
    limit = max_hit_offset(r, cz)
    return bound, limit, bound <= limit


def summaries_to_text(summaries: List[ViolationSummary]) -> str:
    return json.dumps([s.to_dict() for s in summaries], indent=2, sort_keys=True)
