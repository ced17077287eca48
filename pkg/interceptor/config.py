"""Configuration settings for the Lyapunov controller-initialization pipeline."""

import os
from pathlib import Path
from typing import Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

from pipeline.dataset_gen import SearchConfig
from pipeline.lyapunov_model import Axis, Roi
from pipeline.neural_policy import TrainConfig
from pipeline.simulator import SimConfig
from pipeline.verifier import GridSpec

load_dotenv()


class Config:
    """Process-level settings (environment / .env)."""

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: str = os.getenv("LOG_FILE", "lyapunov_init.log")

    # Outputs
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "./runs")

    # Thread fan-out for dataset search and batch simulation
    WORKERS: int = int(os.getenv("WORKERS", "4"))

    # Quality gates
    MAX_INFEASIBLE_RATE: float = float(os.getenv("MAX_INFEASIBLE_RATE", "0.5"))
    MAX_VIOLATION_FRACTION: float = float(os.getenv("MAX_VIOLATION_FRACTION", "0.10"))


config = Config()


class Seeds(BaseModel):
    data_x: int = 1
    data_y: int = 2
    init_x: int = 3
    init_y: int = 4
    train: int = 5


class Gates(BaseModel):
    max_infeasible_rate: float = Field(default_factory=lambda: config.MAX_INFEASIBLE_RATE, ge=0, le=1)
    max_violation_fraction: float = Field(default_factory=lambda: config.MAX_VIOLATION_FRACTION, ge=0, le=1)


class PipelineConfig(BaseModel):
    """Everything a run depends on; defaults reproduce the interception case study."""

    roi: Roi = Roi()
    search: SearchConfig = SearchConfig()
    samples_per_axis: int = Field(default=100_000, ge=0)
    sampling: Literal["uniform_random", "grid"] = "uniform_random"
    train: TrainConfig = TrainConfig()
    grid: GridSpec = GridSpec()
    sim: SimConfig = SimConfig()
    seeds: Seeds = Seeds()
    out_dir: str = Field(default_factory=lambda: config.OUTPUT_DIR)
    gates: Gates = Field(default_factory=Gates)
    hit_radius: float = Field(default=0.3, gt=0)
    workers: int = Field(default_factory=lambda: config.WORKERS, ge=1)

    def to_text(self) -> str:
        return self.model_dump_json(indent=2)

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None, eta: Optional[float] = None,
                       epochs: Optional[int] = None, grid: Optional[int] = None,
                       workers: Optional[int] = None) -> "PipelineConfig":
        """Apply CLI flag overrides and re-validate the result."""
        data = self.model_dump()
        if seed is not None:
            data["seeds"] = {name: seed + offset for offset, name in enumerate(Seeds.model_fields)}
        if out is not None:
            data["out_dir"] = out
        if eta is not None:
            data["search"]["eta"] = eta
        if epochs is not None:
            data["train"]["epochs"] = epochs
        if grid is not None:
            data["grid"]["p"]["count"] = grid
            data["grid"]["cz"]["count"] = grid
        if workers is not None:
            data["workers"] = workers
        resolved = PipelineConfig.model_validate(data)
        resolved.grid.validate_against(resolved.roi, Axis.X)
        resolved.grid.validate_against(resolved.roi, Axis.Y)
        return resolved


def load_pipeline_config(path: Optional[str]) -> PipelineConfig:
    """Read a JSON config file; missing keys take the embedded defaults."""
    if path is None:
        return PipelineConfig()
    file = Path(path)
    if not file.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return PipelineConfig.model_validate_json(file.read_text(encoding="utf-8"))

