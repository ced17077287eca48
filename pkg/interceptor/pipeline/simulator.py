"""Closed-loop simulation of the simplified interception model.

State (cz, px, py): the vehicle closes on the target at vz along the optical
axis while the two axis policies command vx and vy. Commands are executed
instantly and held over each integration step.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .artifacts import PathLike, atomic_write, fmt_float
from .camera_geometry import NormalizedImagePoint, image_point_dynamics, max_hit_offset
from .errors import DomainError
from .lyapunov_model import ControlInput, d_x_values, d_y_values, lyapunov_v
from .verifier import Policy

logger = logging.getLogger(__name__)

DEFAULT_INITIAL_STATES: Tuple[Tuple[float, float, float], ...] = (
    (50.0, 0.8, 0.6),
    (50.0, 0.8, -0.6),
    (50.0, -0.8, 0.6),
    (50.0, -0.8, -0.6),
    (50.0, 1.0, 0.0),
    (50.0, 0.0, -1.0),
)

TRAJECTORY_COLUMNS = ("t", "cz", "px", "py", "vx_cmd", "vy_cmd", "wy_cmd", "Vx", "Vy", "Dx", "Dy")


class SimConfig(BaseModel):
    dt: float = Field(default=0.005, gt=0)
    t_max: float = Field(default=10.0, gt=0)
    vz: float = 15.0
    cz_stop: float = Field(default=0.5, gt=0)
    distance_mode: Literal["true_cz", "fabricated"] = "true_cz"
    cz_fixed: float = Field(default=10.0, gt=0)
    yaw_mode: Literal["zero", "proportional"] = "zero"
    yaw_gain: float = 0.002
    integrator: Literal["rk4", "euler"] = "rk4"


@dataclass
class Trajectory:
    s0: Tuple[float, float, float]
    columns: dict = field(default_factory=lambda: {name: [] for name in TRAJECTORY_COLUMNS})
    timed_out: bool = False

    def append(self, **values: float) -> None:
        for name in TRAJECTORY_COLUMNS:
            self.columns[name].append(float(values[name]))

    def __len__(self) -> int:
        return len(self.columns["t"])

    def array(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name])

    @property
    def v_total(self) -> np.ndarray:
        return self.array("Vx") + self.array("Vy")

    @property
    def final_v(self) -> float:
        return float(self.v_total[-1])

    def converged(self, ratio: float = 10.0) -> bool:
        """Reached the stop distance with V reduced by at least ``ratio``."""
        v = self.v_total
        return (not self.timed_out) and bool(v[-1] < v[0] / ratio)


def dynamics(s: Sequence[float], u: Sequence[float], wy: float) -> np.ndarray:
    """Rate of (cz, px, py) under commands (vx, vy, vz) and gimbal yaw rate wy."""
    cz, px, py = (float(v) for v in s)
    if cz <= 0:
        raise DomainError(f"cz must be > 0, got {cz}")
    vx, vy, vz = (float(v) for v in u)
    p_dot = image_point_dynamics(NormalizedImagePoint(px, py), cz, (vx, vy, vz, wy))
    return np.array([-vz, p_dot[0], p_dot[1]])


def _rk4_step(s: np.ndarray, u, wy: float, h: float) -> np.ndarray:
    k1 = dynamics(s, u, wy)
    k2 = dynamics(s + 0.5 * h * k1, u, wy)
    k3 = dynamics(s + 0.5 * h * k2, u, wy)
    k4 = dynamics(s + h * k3, u, wy)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _euler_step(s: np.ndarray, u, wy: float, h: float) -> np.ndarray:
    return s + h * dynamics(s, u, wy)


def _commands(policies: Tuple[Policy, Policy], s: np.ndarray, cfg: SimConfig) -> Tuple[ControlInput, float]:
    cz, px, py = s
    cz_input = cz if cfg.distance_mode == "true_cz" else cfg.cz_fixed
    policy_x, policy_y = policies
    u = ControlInput(
        vx=float(np.asarray(policy_x.command(px, cfg.vz, cz_input)).reshape(-1)[0]),
        vy=float(np.asarray(policy_y.command(py, cfg.vz, cz_input)).reshape(-1)[0]),
    )
    wy = cfg.yaw_gain * px if cfg.yaw_mode == "proportional" else 0.0
    return u, wy


def _record(traj: Trajectory, t: float, s: np.ndarray, u: ControlInput, wy: float, vz: float) -> None:
    cz, px, py = s
    vx, vy = u.vx, u.vy
    v_x, v_y, _ = lyapunov_v(px, py)
    traj.append(
        t=t, cz=cz, px=px, py=py, vx_cmd=vx, vy_cmd=vy, wy_cmd=wy, Vx=v_x, Vy=v_y,
        Dx=d_x_values(px, vz, cz, wy, vx), Dy=d_y_values(px, py, vz, cz, wy, vy),
    )


def run(policies: Tuple[Policy, Policy], s0: Sequence[float], cfg: SimConfig) -> Trajectory:
    """Integrate from ``s0`` = (cz, px, py) until cz <= cz_stop or t_max."""
    s = np.asarray(s0, dtype=float)
    if s.shape != (3,) or not np.all(np.isfinite(s)):
        raise DomainError(f"initial state must be finite (cz, px, py), got {s0}")
    if s[0] <= cfg.cz_stop:
        raise DomainError(f"initial cz={s[0]} must exceed cz_stop={cfg.cz_stop}")

    step = _rk4_step if cfg.integrator == "rk4" else _euler_step
    max_steps = int(round(cfg.t_max / cfg.dt))
    traj = Trajectory(s0=tuple(float(v) for v in s))

    k = 0
    u, wy = _commands(policies, s, cfg)
    _record(traj, 0.0, s, u, wy, cfg.vz)
    while k < max_steps and s[0] > cfg.cz_stop:
        # The last step is shortened so cz lands on cz_stop instead of crossing zero.
        closing = cfg.vz > 0 and s[0] - cfg.vz * cfg.dt <= cfg.cz_stop
        h = (s[0] - cfg.cz_stop) / cfg.vz if closing else cfg.dt
        s = step(s, (u.vx, u.vy, cfg.vz), wy, h)
        t = k * cfg.dt + h if closing else (k + 1) * cfg.dt
        k += 1
        if closing:
            s[0] = cfg.cz_stop
        u, wy = _commands(policies, s, cfg)
        _record(traj, t, s, u, wy, cfg.vz)

    traj.timed_out = bool(s[0] > cfg.cz_stop)
    if traj.timed_out:
        logger.warning(f"⚠️ SIM: run from {traj.s0} hit t_max={cfg.t_max}s at cz={s[0]:.3f}")
    logger.debug(f"SIM: run from {traj.s0} finished after {k} steps, final V={traj.final_v:.3e}")
    return traj


def run_batch(policies: Tuple[Policy, Policy], initial_states: Sequence[Sequence[float]] = DEFAULT_INITIAL_STATES,
              cfg: Optional[SimConfig] = None, workers: int = 1) -> List[Trajectory]:
    cfg = cfg or SimConfig()
    logger.info(f"🚀 SIM: {len(initial_states)} runs, distance_mode={cfg.distance_mode}, "
                f"yaw_mode={cfg.yaw_mode}, {cfg.integrator} dt={cfg.dt}")
    with ThreadPoolExecutor(max_workers=max(1, workers), thread_name_prefix="SIM") as executor:
        trajectories = list(executor.map(lambda s0: run(policies, s0, cfg), initial_states))
    converged = sum(t.converged() for t in trajectories)
    logger.info(f"✅ SIM: {converged}/{len(trajectories)} runs converged (V_end < V_0/10)")
    return trajectories


def hit_assessment(traj: Trajectory, r: float) -> bool:
    """True when the final image offset lies within the target's inscribed radius at the final distance."""
    cz_end = traj.columns["cz"][-1]
    offset = math.hypot(traj.columns["px"][-1], traj.columns["py"][-1])
    return bool(offset <= max_hit_offset(r, float(cz_end)))


def _rows(traj: Trajectory):
    return zip(*(traj.columns[name] for name in TRAJECTORY_COLUMNS))


def export_trajectory_csv(traj: Trajectory, path: PathLike) -> None:
    with atomic_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for row in _rows(traj):
            writer.writerow([fmt_float(v) for v in row])


def export_batch_csv(trajectories: Sequence[Trajectory], path: PathLike) -> None:
    """One table, one block of rows per run, keyed by the leading ``run`` column."""
    with atomic_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("run",) + TRAJECTORY_COLUMNS)
        for run_id, traj in enumerate(trajectories):
            for row in _rows(traj):
                writer.writerow([run_id, *(fmt_float(v) for v in row)])
    logger.info(f"SIM: wrote {len(trajectories)} trajectories to {path}")
