import json
import logging
import math
import time
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np

from .artifacts import atomic_write
from .dataset_gen import Dataset, GenerationReport, generate_dataset, yaw_spread
from .errors import QualityGateError
from .lyapunov_model import Axis
from .neural_policy import MlpParams, TrainReport, default_output_scale, load_model, mlp_init, save_model, train, \
    write_loss_curve
from .simulator import DEFAULT_INITIAL_STATES, Trajectory, export_batch_csv, hit_assessment, run_batch
from .verifier import ViolationSummary, export_roa_csv, hit_check, summaries_to_text, verify_axis, violation_summary

if TYPE_CHECKING:
    from config import PipelineConfig

logger = logging.getLogger(__name__)

TRAJECTORY_FILES = {"true_cz": "trajectories_true_cz.csv", "fabricated": "trajectories_fabricated_cz.csv"}


class PipelineState(Enum):
    """Pipeline processing states."""
    IDLE = "idle"
    GENERATING = "generating"
    TRAINING = "training"
    VERIFYING = "verifying"
    SIMULATING = "simulating"
    DONE = "done"
    ERROR = "error"


class PipelineManager:
    """Runs generate -> train -> verify -> simulate and writes every artifact under ``out_dir``."""

    def __init__(self, config: "PipelineConfig", out_dir: Optional[Path] = None):
        self.config = config
        self.out_dir = Path(out_dir if out_dir is not None else config.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._state = PipelineState.IDLE

        self.datasets: Dict[Axis, Dataset] = {}
        self.policies: Dict[Axis, MlpParams] = {}
        self.train_reports: Dict[Axis, TrainReport] = {}
        self.yaw_floor_rmse: Dict[Axis, float] = {}
        self.summaries: Dict[Axis, ViolationSummary] = {}
        self.trajectories: Dict[str, List[Trajectory]] = {}

        self._stats = {
            'stage_seconds': {},
            'generation': {},
            'final_loss': {},
            'heldout_rmse': {},
            'yaw_floor_rmse': {},
            'violation_fraction': {},
            'converged': {},
            'errors': 0,
        }
        logger.info(f"🚀 Pipeline ready, artifacts go to {self.out_dir}")

    @property
    def state(self) -> PipelineState:
        return self._state

    def _set_state(self, new_state: PipelineState):
        if self._state != new_state:
            logger.debug(f"🔄 State transition: {self._state.value} → {new_state.value}")
            self._state = new_state

    def _path(self, name: str) -> Path:
        return self.out_dir / name

    def _stage(self, state: PipelineState, work):
        self._set_state(state)
        started = time.time()
        try:
            result = work()
        except Exception:
            self._stats['errors'] += 1
            self._set_state(PipelineState.ERROR)
            raise
        self._stats['stage_seconds'][state.value] = round(time.time() - started, 3)
        return result

    # --- stages ---------------------------------------------------------------

    def generate(self) -> Dict[Axis, Dataset]:
        return self._stage(PipelineState.GENERATING, self._generate)

    def _generate(self) -> Dict[Axis, Dataset]:
        cfg = self.config
        reports: Dict[str, GenerationReport] = {}
        for axis, seed in ((Axis.X, cfg.seeds.data_x), (Axis.Y, cfg.seeds.data_y)):
            dataset, report = generate_dataset(axis, cfg.roi, cfg.samples_per_axis, cfg.search, seed,
                                               cfg.sampling, cfg.workers)
            dataset.write_csv(self._path(f"S_{axis.value}.csv"))
            self.datasets[axis] = dataset
            reports[axis.value] = report
            self._stats['generation'][axis.value] = report.to_dict()

        with atomic_write(self._path("generation_report.json")) as handle:
            json.dump({axis: r.to_dict() for axis, r in reports.items()}, handle, indent=2, sort_keys=True)
            handle.write("\n")

        limit = cfg.gates.max_infeasible_rate
        too_many = {axis: r.infeasible_rate for axis, r in reports.items() if r.infeasible_rate > limit}
        if too_many:
            raise QualityGateError(f"infeasible rate above {limit:.1%}: "
                                   + ", ".join(f"{a}={rate:.1%}" for a, rate in too_many.items()))
        return self.datasets

    def train(self, datasets: Optional[Dict[Axis, Dataset]] = None) -> Dict[Axis, MlpParams]:
        if datasets is not None:
            self.datasets = dict(datasets)
        return self._stage(PipelineState.TRAINING, self._train)

    def _train(self) -> Dict[Axis, MlpParams]:
        cfg = self.config
        train_cfg = cfg.train.model_copy(update={"seed": cfg.seeds.train})
        output_scale = default_output_scale(cfg.search)
        for axis, init_seed in ((Axis.X, cfg.seeds.init_x), (Axis.Y, cfg.seeds.init_y)):
            if axis not in self.datasets:
                continue
            p0 = mlp_init(seed=init_seed, roi=cfg.roi, axis=axis, output_scale=output_scale)
            policy, report = train(p0, self.datasets[axis], train_cfg)
            save_model(policy, self._path(f"model_{axis.value}.json"))
            write_loss_curve(report, self._path(f"loss_{axis.value}.csv"))
            self.policies[axis] = policy
            self.train_reports[axis] = report
            self._stats['final_loss'][axis.value] = report.final_loss
            self._stats['heldout_rmse'][axis.value] = report.heldout_rmse
            floor = math.sqrt(float(np.mean(yaw_spread(self.datasets[axis], cfg.search))))
            self.yaw_floor_rmse[axis] = floor
            self._stats['yaw_floor_rmse'][axis.value] = floor
            logger.info(f"TRAIN: {axis.value} held-out rmse={report.heldout_rmse:.4g}, "
                        f"unseen-wy floor={floor:.4g}")
        return self.policies

    def load_policies(self, model_x: Path, model_y: Path) -> Dict[Axis, MlpParams]:
        self.policies = {Axis.X: load_model(model_x), Axis.Y: load_model(model_y)}
        return self.policies

    def verify(self) -> List[ViolationSummary]:
        return self._stage(PipelineState.VERIFYING, self._verify)

    def _verify(self) -> List[ViolationSummary]:
        cfg = self.config
        for axis, policy in sorted(self.policies.items(), key=lambda item: item[0].value):
            report = verify_axis(policy, axis, cfg.grid, cfg.roi)
            export_roa_csv(report, self._path(f"roa_{axis.value}.csv"))
            summary = violation_summary(report)
            self.summaries[axis] = summary
            self._stats['violation_fraction'][axis.value] = summary.violation_fraction

        summaries = list(self.summaries.values())
        with atomic_write(self._path("verify_summary.json")) as handle:
            handle.write(summaries_to_text(summaries) + "\n")

        for summary in summaries:
            bound, limit, passes = hit_check(summary, cfg.hit_radius)
            marker = "✅" if passes else "⚠️"
            logger.info(f"{marker} VERIFY: {summary.axis}-axis static error bound at cz=1m is {bound:.3f} "
                        f"(hit limit for r={cfg.hit_radius}m: {limit:.3f})")

        limit = cfg.gates.max_violation_fraction
        bad = [s for s in summaries if s.violation_fraction > limit]
        if bad:
            raise QualityGateError(f"violation fraction above {limit:.1%}: "
                                   + ", ".join(f"{s.axis}={s.violation_fraction:.1%}" for s in bad))
        return summaries

    def simulate(self, initial_states: Sequence[Sequence[float]] = DEFAULT_INITIAL_STATES) -> Dict[str, List[Trajectory]]:
        return self._stage(PipelineState.SIMULATING, lambda: self._simulate(initial_states))

    def _simulate(self, initial_states) -> Dict[str, List[Trajectory]]:
        cfg = self.config
        policies = (self.policies[Axis.X], self.policies[Axis.Y])
        for mode, filename in TRAJECTORY_FILES.items():
            sim_cfg = cfg.sim.model_copy(update={"distance_mode": mode})
            trajectories = run_batch(policies, initial_states, sim_cfg, cfg.workers)
            export_batch_csv(trajectories, self._path(filename))
            self.trajectories[mode] = trajectories
            self._stats['converged'][mode] = [t.converged() for t in trajectories]
        return self.trajectories

    # --- end to end -------------------------------------------------------------

    def run_all(self) -> dict:
        logger.info("🚀 Running full pipeline: generate → train → verify → simulate")
        self.generate()
        self.train()
        self.verify()
        self.simulate()
        summary = self.summary()
        with atomic_write(self._path("summary.json")) as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write("\n")
        self._set_state(PipelineState.DONE)
        logger.info("✅ Pipeline finished")
        return summary

    def summary(self) -> dict:
        """Deterministic digest of the run (no wall-clock values)."""
        r = self.config.hit_radius
        return {
            "eta": self.config.search.eta,
            "final_loss": {a.value: rep.final_loss for a, rep in self.train_reports.items()},
            "heldout_rmse": {a.value: rep.heldout_rmse for a, rep in self.train_reports.items()},
            "yaw_floor_rmse": {a.value: v for a, v in self.yaw_floor_rmse.items()},
            "violation_fraction": {a.value: s.violation_fraction for a, s in self.summaries.items()},
            "hit_check": {a.value: dict(zip(("bound", "limit", "passes"), hit_check(s, r)))
                          for a, s in self.summaries.items()},
            "trajectories": {
                mode: [{"s0": list(t.s0), "final_v": t.final_v, "converged": t.converged(),
                        "hit": hit_assessment(t, r), "timed_out": t.timed_out} for t in runs]
                for mode, runs in self.trajectories.items()
            },
        }

    def get_stats(self) -> dict:
        return {'state': self._state.value, **self._stats}


def eta_sweep(config: "PipelineConfig", etas: Sequence[float], out_dir: Optional[Path] = None) -> List[dict]:
    """Run the full pipeline once per eta, each into its own ``eta_<value>`` subdirectory.

    Quality gates are reported per row instead of aborting the sweep.
    """
    root = Path(out_dir if out_dir is not None else config.out_dir)
    rows = []
    for eta in etas:
        cfg = config.model_copy(update={"search": config.search.model_copy(update={"eta": float(eta)})})
        manager = PipelineManager(cfg, root / f"eta_{eta:g}")
        logger.info(f"🚀 SWEEP: eta={eta:g}")
        try:
            summary = manager.run_all()
            summary["gate_failure"] = None
        except QualityGateError as exc:
            logger.warning(f"⚠️ SWEEP: eta={eta:g} failed a quality gate: {exc}")
            summary = manager.summary()
            summary["gate_failure"] = str(exc)
        rows.append(summary)

    with atomic_write(root / "eta_sweep.json") as handle:
        json.dump(rows, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return rows
