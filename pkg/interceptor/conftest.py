import pytest

from config import Gates, PipelineConfig
from pipeline.neural_policy import TrainConfig
from pipeline.pipeline_manager import PipelineManager
from pipeline.simulator import SimConfig
from pipeline.verifier import GridSpec

SMALL_CONFIG = {
    "samples_per_axis": 2000,
    "train": {"epochs": 2, "batch_size": 128},
    "grid": {"p": {"lo": -1.0, "hi": 1.0, "count": 20}, "cz": {"lo": 0.5, "hi": 50.0, "count": 20}},
    "sim": {"dt": 0.01},
    "gates": {"max_infeasible_rate": 0.5, "max_violation_fraction": 1.0},
    "workers": 2,
}


@pytest.fixture
def small_config(tmp_path) -> PipelineConfig:
    """Desk-sized run: small datasets, two epochs, coarse grid, no violation gate."""
    return PipelineConfig(
        samples_per_axis=SMALL_CONFIG["samples_per_axis"],
        train=TrainConfig(**SMALL_CONFIG["train"]),
        grid=GridSpec().with_resolution(20),
        sim=SimConfig(**SMALL_CONFIG["sim"]),
        gates=Gates(**SMALL_CONFIG["gates"]),
        workers=SMALL_CONFIG["workers"],
        out_dir=str(tmp_path / "run"),
    )


@pytest.fixture(scope="session")
def default_run(tmp_path_factory) -> PipelineManager:
    """The full default pipeline (100k samples per axis, five epochs), run once per session."""
    manager = PipelineManager(PipelineConfig(out_dir=str(tmp_path_factory.mktemp("default_run"))))
    manager.run_all()
    return manager
