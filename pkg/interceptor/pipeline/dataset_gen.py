"""Synthesis of (state, input) datasets that satisfy the Lyapunov decrease condition.

For each sampled state the generator looks for the control component u that
minimises |D(x, u) + eta * W(x)| subject to D(x, u) < 0. D is affine in u, so
the unbounded minimiser is available in closed form; the numeric scheme finds
the same point by a coarse grid plus golden-section refinement, which keeps it
usable for any bounded input interval.
"""

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .artifacts import PathLike, atomic_write, fmt_float
from .errors import ConfigError, DegenerateStateError, DomainError, InfeasibleInputError
from .lyapunov_model import (
    STATE_FIELDS,
    Axis,
    InterceptState,
    Interval,
    Roi,
    d_axis,
    d_values,
    w_value,
)

logger = logging.getLogger(__name__)

GRID_POINTS = 1024
INV_PHI = (math.sqrt(5) - 1) / 2  # 1/phi
INV_PHI_SQ = (3 - math.sqrt(5)) / 2  # 1/phi^2

CSV_HEADER = ("axis", "px", "py", "vz", "cz", "wy", "u", "achieved_d")


class SearchConfig(BaseModel):
    eta: float = Field(default=2.0, gt=0)
    input_bounds: Interval = Interval(lo=-30.0, hi=30.0)
    tolerance: float = Field(default=1e-8, gt=0)
    scheme: Literal["closed_form", "numeric"] = "closed_form"


class SampleStatus(str, Enum):
    SOLVED = "solved"
    CLAMPED = "clamped_at_bound"
    DEGENERATE = "degenerate"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class LabeledSample:
    axis: Axis
    state: InterceptState
    input: float
    achieved_d: float


@dataclass
class GenerationReport:
    axis: str
    requested: int = 0
    solved: int = 0
    clamped_at_bound: int = 0
    degenerate: int = 0
    infeasible: int = 0
    elapsed_s: float = 0.0

    @property
    def retained(self) -> int:
        return self.solved + self.clamped_at_bound + self.degenerate

    @property
    def infeasible_rate(self) -> float:
        return self.infeasible / self.requested if self.requested else 0.0

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("elapsed_s")
        data["retained"] = self.retained
        data["infeasible_rate"] = self.infeasible_rate
        return data

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class Dataset:
    """Retained samples of one axis, stored column-wise."""

    axis: Axis
    states: np.ndarray  # (n, 5) in STATE_FIELDS order
    inputs: np.ndarray  # (n,)
    achieved_d: np.ndarray  # (n,)
    roi: Roi = field(default_factory=Roi)
    eta: float = 2.0
    seed: Optional[int] = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, len(STATE_FIELDS))
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1)
        self.achieved_d = np.asarray(self.achieved_d, dtype=float).reshape(-1)
        if not (len(self.states) == len(self.inputs) == len(self.achieved_d)):
            raise ConfigError("dataset columns have different lengths")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def samples(self) -> Iterator[LabeledSample]:
        for row, u, d in zip(self.states, self.inputs, self.achieved_d):
            yield LabeledSample(self.axis, InterceptState.from_array(row), float(u), float(d))

    def policy_inputs(self) -> np.ndarray:
        """(n, 3) network inputs: (own image coordinate, vz, cz)."""
        idx = self.axis.coordinate_index
        return np.column_stack([self.states[:, idx], self.states[:, 2], self.states[:, 3]])

    def write_csv(self, path: PathLike) -> None:
        with atomic_write(path) as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row, u, d in zip(self.states, self.inputs, self.achieved_d):
                writer.writerow([self.axis.value, *(fmt_float(v) for v in row), fmt_float(u), fmt_float(d)])
        logger.info(f"DATASET: wrote {len(self)} {self.axis.value}-axis samples to {path}")

    @classmethod
    def read_csv(cls, path: PathLike, roi: Optional[Roi] = None, eta: float = 2.0,
                 seed: Optional[int] = None) -> "Dataset":
        path = Path(path)
        with path.open("r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or tuple(header) != CSV_HEADER:
                raise ConfigError(f"{path}: unexpected dataset header {header}")
            axes, rows = set(), []
            for line in reader:
                axes.add(line[0])
                rows.append([float(v) for v in line[1:]])
        if len(axes) > 1:
            raise ConfigError(f"{path}: mixed axes {sorted(axes)}")
        if not axes:
            raise ConfigError(f"{path}: dataset is empty, axis unknown")
        data = np.array(rows, dtype=float).reshape(-1, 7)
        return cls(Axis(axes.pop()), data[:, :5], data[:, 5], data[:, 6], roi=roi or Roi(), eta=eta, seed=seed)


# --- per-state solvers -------------------------------------------------------

def _closed_form_array(axis: Axis, states: np.ndarray, eta: float) -> np.ndarray:
    px, py, vz, cz, wy = (states[:, i] for i in range(5))
    if axis is Axis.X:
        return vz * px + eta * cz * px - cz * (1.0 + px * px) * wy
    return vz * py + eta * cz * py - cz * px * py * wy


def solve_input_closed_form(axis: Axis, s: InterceptState, eta: float) -> float:
    """Input that makes D = -eta * W exactly (no bounds)."""
    if eta <= 0:
        raise DomainError(f"eta must be > 0, got {eta}")
    if s.coordinate(axis) == 0.0:
        raise DegenerateStateError(f"{axis.value}-coordinate is 0: D is identically 0 in the input")
    return float(_closed_form_array(axis, s.as_array()[None, :], eta)[0])


def _golden_section(obj, a: float, b: float, tol: float) -> float:
    dist = b - a
    if dist <= tol:
        return 0.5 * (a + b)
    n = int(math.ceil(math.log(tol / dist) / math.log(INV_PHI)))
    c = a + INV_PHI_SQ * dist
    d = a + INV_PHI * dist
    yc, yd = obj(c), obj(d)
    for _ in range(n - 1):
        if yc < yd:
            b, d, yd = d, c, yc
            dist = INV_PHI * dist
            c = a + INV_PHI_SQ * dist
            yc = obj(c)
        else:
            a, c, yc = c, d, yd
            dist = INV_PHI * dist
            d = a + INV_PHI * dist
            yd = obj(d)
    return 0.5 * (a + d) if yc < yd else 0.5 * (c + b)


def solve_input_numeric(axis: Axis, s: InterceptState, cfg: SearchConfig) -> float:
    """Bounded minimiser of |D + eta W| subject to D < 0.

    Raises InfeasibleInputError (with the best u found and its D) if no input in
    the bounds gives D < 0.
    """
    lo, hi = cfg.input_bounds.lo, cfg.input_bounds.hi
    target = -cfg.eta * w_value(s.coordinate(axis))
    row = s.as_array()[None, :]

    def d_of(u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return d_values(axis, np.broadcast_to(row, (len(u), 5)), u)

    def objective(u: float) -> float:
        d = d_axis(axis, s, u)
        return abs(d - target) if d < 0 else math.inf

    grid = np.linspace(lo, hi, GRID_POINTS)
    d_grid = d_of(grid)
    feasible = d_grid < 0
    if not np.any(feasible):
        best = int(np.argmin(d_grid))
        raise InfeasibleInputError(
            f"no input in [{lo}, {hi}] gives D < 0 for {axis.value}-axis state {s}",
            best_u=float(grid[best]), best_d=float(d_grid[best]),
        )
    residual = np.where(feasible, np.abs(d_grid - target), np.inf)
    i = int(np.argmin(residual))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, GRID_POINTS - 1)]
    refined = _golden_section(objective, float(a), float(b), tol=cfg.tolerance * 1e-2)

    candidates = [refined, float(grid[i]), lo, hi]
    scores = [objective(u) for u in candidates]
    return candidates[int(np.argmin(scores))]


# --- sampling ----------------------------------------------------------------

def sample_roi(roi: Roi, n: int, seed: Optional[int] = None,
               scheme: Literal["uniform_random", "grid"] = "uniform_random") -> np.ndarray:
    """(n, 5) states inside ``roi``; deterministic for a given seed."""
    if n < 0:
        raise ConfigError(f"sample count must be >= 0, got {n}")
    bounds = roi.bounds_array()
    if n == 0:
        return np.empty((0, len(STATE_FIELDS)))
    if scheme == "uniform_random":
        rng = np.random.default_rng(seed)
        return rng.uniform(bounds[:, 0], bounds[:, 1], size=(n, len(STATE_FIELDS)))
    if scheme == "grid":
        k = int(round(n ** (1.0 / len(STATE_FIELDS))))
        if k ** len(STATE_FIELDS) != n or k < 2:
            raise ConfigError(f"grid sampling needs n = k^5 with k >= 2, got n={n}")
        axes = [np.linspace(lo, hi, k) for lo, hi in bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.reshape(-1) for m in mesh])
    raise ConfigError(f"unknown sampling scheme {scheme!r}")


# --- generation --------------------------------------------------------------

def _label_closed_form(axis: Axis, states: np.ndarray, cfg: SearchConfig) -> Tuple[np.ndarray, np.ndarray]:
    unbounded = _closed_form_array(axis, states, cfg.eta)
    return np.clip(unbounded, cfg.input_bounds.lo, cfg.input_bounds.hi), unbounded


def _label_numeric(axis: Axis, states: np.ndarray, cfg: SearchConfig, workers: int):
    unbounded = _closed_form_array(axis, states, cfg.eta)
    coord = states[:, axis.coordinate_index]

    def solve(i: int) -> float:
        if coord[i] == 0.0:
            return float(np.clip(unbounded[i], cfg.input_bounds.lo, cfg.input_bounds.hi))
        try:
            return solve_input_numeric(axis, InterceptState.from_array(states[i]), cfg)
        except InfeasibleInputError as exc:
            logger.debug(f"DATASET: sample {i} infeasible (best u={exc.best_u:.4f}, D={exc.best_d:.4e})")
            return math.nan

    with ThreadPoolExecutor(max_workers=max(1, workers), thread_name_prefix="SEARCH") as executor:
        labels = np.fromiter(executor.map(solve, range(len(states))), dtype=float, count=len(states))
    return labels, unbounded


def generate_dataset(axis: Axis, roi: Roi, n: int, cfg: SearchConfig, seed: Optional[int] = None,
                     sampling: Literal["uniform_random", "grid"] = "uniform_random",
                     workers: int = 1) -> Tuple[Dataset, GenerationReport]:
    """Sample ``n`` states and label each with a decrease-condition input.

    States where the axis coordinate is exactly 0 cannot reach D < 0; they are
    kept with the limit input of the closed form (which reduces to
    -cz*(1+px^2)*wy on the x axis and 0 on the y axis).
    Infeasible states are dropped and counted in the report.
    """
    started = time.time()
    logger.info(f"🚀 DATASET: generating {n} {axis.value}-axis samples (eta={cfg.eta}, scheme={cfg.scheme}, seed={seed})")
    states = sample_roi(roi, n, seed, sampling)
    report = GenerationReport(axis=axis.value, requested=len(states))
    if len(states) == 0:
        return Dataset(axis, states, np.empty(0), np.empty(0), roi=roi, eta=cfg.eta, seed=seed), report

    if cfg.scheme == "closed_form":
        labels, unbounded = _label_closed_form(axis, states, cfg)
    else:
        labels, unbounded = _label_numeric(axis, states, cfg, workers)

    coord = states[:, axis.coordinate_index]
    degenerate = coord == 0.0
    achieved = np.where(np.isnan(labels), np.nan, d_values(axis, states, np.nan_to_num(labels)))
    achieved[degenerate] = 0.0
    feasible = ~degenerate & ~np.isnan(labels) & (achieved < 0)
    in_bounds = cfg.input_bounds.contains(unbounded)

    status = np.full(len(states), SampleStatus.INFEASIBLE.value, dtype=object)
    status[feasible & in_bounds] = SampleStatus.SOLVED.value
    status[feasible & ~in_bounds] = SampleStatus.CLAMPED.value
    status[degenerate] = SampleStatus.DEGENERATE.value

    report.solved = int(np.sum(status == SampleStatus.SOLVED.value))
    report.clamped_at_bound = int(np.sum(status == SampleStatus.CLAMPED.value))
    report.degenerate = int(np.sum(degenerate))
    report.infeasible = int(np.sum(status == SampleStatus.INFEASIBLE.value))

    keep = status != SampleStatus.INFEASIBLE.value
    dataset = Dataset(axis, states[keep], labels[keep], achieved[keep], roi=roi, eta=cfg.eta, seed=seed)
    report.elapsed_s = time.time() - started
    logger.info(
        f"✅ DATASET: {axis.value}-axis retained {report.retained}/{report.requested} "
        f"(clamped={report.clamped_at_bound}, degenerate={report.degenerate}, infeasible={report.infeasible}) "
        f"in {report.elapsed_s:.2f}s"
    )
    if report.infeasible:
        logger.warning(f"⚠️ DATASET: {report.infeasible_rate:.1%} of {axis.value}-axis states had no bounded input with D < 0")
    return dataset, report


def recheck(dataset: Dataset) -> np.ndarray:
    """Re-evaluate D for every stored sample."""
    return d_values(dataset.axis, dataset.states, dataset.inputs)


def yaw_spread(dataset: Dataset, cfg: SearchConfig, points: int = 201, chunk: int = 2000) -> np.ndarray:
    """Per-sample variance of the closed-form label over the RoI's wy range.

    The policy sees (coordinate, vz, cz) but not wy, so the mean of this array is a
    lower bound on the mean squared error any policy can reach on ``dataset``. The
    y label also varies with the unseen px, which only adds to the true floor.
    Yaw rates whose clamped label is infeasible are left out, as generation
    leaves them out.
    """
    if points < 1:
        raise ConfigError(f"points must be >= 1, got {points}")
    wy_lo, wy_hi = dataset.roi.wy.lo, dataset.roi.wy.hi
    wy = wy_lo + (np.arange(points) + 0.5) * (wy_hi - wy_lo) / points
    idx = dataset.axis.coordinate_index
    spread = np.zeros(len(dataset))
    for start in range(0, len(dataset), chunk):
        block = dataset.states[start:start + chunk]
        grid = np.repeat(block, points, axis=0)
        grid[:, 4] = np.tile(wy, len(block))
        labels, _ = _label_closed_form(dataset.axis, grid, cfg)
        keep = (d_values(dataset.axis, grid, labels) < 0) | (grid[:, idx] == 0.0)
        labels = labels.reshape(len(block), points)
        keep = keep.reshape(len(block), points)
        count = keep.sum(axis=1)
        mean = np.divide((labels * keep).sum(axis=1), count, out=np.zeros(len(block)), where=count > 0)
        sq = (((labels - mean[:, None]) ** 2) * keep).sum(axis=1)
        spread[start:start + len(block)] = np.divide(sq, count, out=np.zeros(len(block)), where=count > 0)
    return spread
