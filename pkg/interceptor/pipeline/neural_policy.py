"""Feed-forward tanh policy (3 -> 16 -> 16 -> 16 -> 1) and its supervised training.

Inputs are (image coordinate of the policy's axis, vz, cz), each mapped affinely
onto [-1, 1] from the RoI. Hidden layers use tanh, the output layer is linear and
multiplied by ``output_scale`` so the network speaks m/s directly.
Everything runs in float64 on the CPU.
"""

import contextlib
import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, Field, ValidationError
from torch import nn

from .artifacts import PathLike, atomic_write, fmt_float
from .dataset_gen import Dataset, SearchConfig
from .errors import ConfigError, CorruptModelError, DomainError, ModelVersionError, TrainingDivergedError
from .lyapunov_model import Axis, Roi

logger = logging.getLogger(__name__)

DEFAULT_LAYER_SIZES = (3, 16, 16, 16, 1)
MODEL_FORMAT = "lyapunov-init-policy"
MODEL_VERSION = 1
DTYPE = torch.float64


class TrainConfig(BaseModel):
    epochs: int = Field(default=5, gt=0)
    batch_size: int = Field(default=32, gt=0)
    learning_rate: float = Field(default=3e-3, gt=0)
    # "cosine" anneals the step size from learning_rate to zero over the whole run.
    lr_schedule: Literal["constant", "cosine"] = "cosine"
    seed: int = 0
    optimizer: Literal["sgd", "adam"] = "adam"
    shuffle: bool = True
    heldout_fraction: float = Field(default=0.1, ge=0, lt=1)


class MlpParams(nn.Module):
    """Weights, biases and input/output scaling of one axis policy."""

    def __init__(self, layer_sizes: Sequence[int] = DEFAULT_LAYER_SIZES,
                 input_shift: Sequence[float] = (0.0, 0.0, 0.0),
                 input_scale: Sequence[float] = (1.0, 1.0, 1.0),
                 output_scale: float = 1.0, axis: Axis = Axis.X):
        super().__init__()
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or sizes[0] != 3 or sizes[-1] != 1 or any(s <= 0 for s in sizes):
            raise ConfigError(f"layer sizes must start with 3, end with 1 and be positive, got {sizes}")
        scale = torch.as_tensor(input_scale, dtype=DTYPE)
        if scale.shape != (3,) or torch.any(scale <= 0):
            raise ConfigError(f"input_scale must be 3 positive values, got {list(input_scale)}")
        if not output_scale > 0:
            raise ConfigError(f"output_scale must be > 0, got {output_scale}")
        self.layer_sizes = sizes
        self.axis = Axis(axis)
        self.output_scale = float(output_scale)
        self.layers = nn.ModuleList(
            nn.Linear(n_in, n_out, dtype=DTYPE) for n_in, n_out in zip(sizes[:-1], sizes[1:])
        )
        self.register_buffer("input_shift", torch.as_tensor(input_shift, dtype=DTYPE).clone())
        self.register_buffer("input_scale", scale.clone())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = (x - self.input_shift) / self.input_scale
        for layer in self.layers[:-1]:
            z = torch.tanh(layer(z))
        return self.layers[-1](z).squeeze(-1) * self.output_scale

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def command(self, p, vz, cz) -> np.ndarray:
        """Policy protocol: vectorized command in m/s."""
        p, vz, cz = np.broadcast_arrays(np.asarray(p, float), np.asarray(vz, float), np.asarray(cz, float))
        inputs = np.stack([p.reshape(-1), vz.reshape(-1), cz.reshape(-1)], axis=1)
        return forward(self, inputs).reshape(p.shape)

    def output_bound(self) -> float:
        """|output| can never exceed this value (tanh activations lie in [-1, 1])."""
        last = self.layers[-1]
        return self.output_scale * float(last.weight.detach().abs().sum() + last.bias.detach().abs().sum())


def roi_scaler(roi: Roi, axis: Axis) -> Tuple[List[float], List[float]]:
    """Affine (shift, scale) mapping the RoI ranges of (p, vz, cz) onto [-1, 1]."""
    fields = ("px" if axis is Axis.X else "py", "vz", "cz")
    intervals = [roi.interval(f) for f in fields]
    return [i.center for i in intervals], [i.half_width for i in intervals]


def default_output_scale(search: SearchConfig) -> float:
    return max(abs(search.input_bounds.lo), abs(search.input_bounds.hi))


def mlp_init(layer_sizes: Sequence[int] = DEFAULT_LAYER_SIZES, seed: int = 0,
             roi: Optional[Roi] = None, axis: Axis = Axis.X, output_scale: float = 30.0) -> MlpParams:
    """Seeded Xavier-uniform weights, zero biases."""
    shift, scale = roi_scaler(roi or Roi(), axis)
    policy = MlpParams(layer_sizes, shift, scale, output_scale, axis)
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for layer in policy.layers:
            n_out, n_in = layer.weight.shape
            bound = math.sqrt(6.0 / (n_in + n_out))
            layer.weight.copy_((2.0 * torch.rand((n_out, n_in), generator=generator, dtype=DTYPE) - 1.0) * bound)
            layer.bias.zero_()
    logger.debug(f"TRAIN: initialized {policy.layer_sizes} policy for axis {axis.value} (seed={seed})")
    return policy


def forward(p: MlpParams, inputs) -> np.ndarray:
    """Evaluate the policy on an (n, 3) array (or a single 3-vector) of (p, vz, cz)."""
    x = torch.as_tensor(np.atleast_2d(np.asarray(inputs, dtype=float)), dtype=DTYPE)
    with torch.no_grad():
        return p(x).numpy().copy()


def _mse(p: MlpParams, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return torch.mean((p(x) - y) ** 2)


def backward(p: MlpParams, inputs, targets) -> List[np.ndarray]:
    """Gradient of the batch mean squared error w.r.t. every parameter, in ``parameters()`` order."""
    x = torch.as_tensor(np.atleast_2d(np.asarray(inputs, dtype=float)), dtype=DTYPE)
    y = torch.as_tensor(np.asarray(targets, dtype=float).reshape(-1), dtype=DTYPE)
    if len(x) == 0:
        raise DomainError("backward needs a non-empty batch")
    p.zero_grad(set_to_none=True)
    _mse(p, x, y).backward()
    grads = [param.grad.detach().numpy().copy() for param in p.parameters()]
    p.zero_grad(set_to_none=True)
    return grads


def gradient_check(p: MlpParams, inputs, targets, h: float = 1e-5) -> float:
    """Max relative error between :func:`backward` and central differences."""
    analytic = backward(p, inputs, targets)
    x = torch.as_tensor(np.atleast_2d(np.asarray(inputs, dtype=float)), dtype=DTYPE)
    y = torch.as_tensor(np.asarray(targets, dtype=float).reshape(-1), dtype=DTYPE)
    worst = 0.0
    with torch.no_grad():
        for param, grad in zip(p.parameters(), analytic):
            flat = param.view(-1)
            numeric = np.empty(flat.numel())
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                plus = _mse(p, x, y).item()
                flat[i] = original - h
                minus = _mse(p, x, y).item()
                flat[i] = original
                numeric[i] = (plus - minus) / (2.0 * h)
            scale = max(np.max(np.abs(grad)), np.max(np.abs(numeric)), 1e-12)
            worst = max(worst, float(np.max(np.abs(grad.reshape(-1) - numeric)) / scale))
    return worst


@dataclass
class TrainReport:
    """Loss history; index k holds the value after epoch k (k = 0 is the untrained network)."""

    axis: str
    train_mse: List[float] = field(default_factory=list)
    train_mae: List[float] = field(default_factory=list)
    heldout_mse: List[float] = field(default_factory=list)
    heldout_mae: List[float] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.train_mse[-1]

    @property
    def heldout_rmse(self) -> float:
        return math.sqrt(self.heldout_mse[-1]) if self.heldout_mse else math.nan


@contextlib.contextmanager
def _single_thread():
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def _split(n: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_heldout = int(round(n * fraction)) if n > 1 else 0
    return order[n_heldout:], order[:n_heldout]


def _metrics(p: MlpParams, x: torch.Tensor, y: torch.Tensor) -> Tuple[float, float]:
    if len(x) == 0:
        return math.nan, math.nan
    with torch.no_grad():
        err = p(x) - y
        return float(torch.mean(err ** 2)), float(torch.mean(err.abs()))


def train(p0: MlpParams, ds: Dataset, cfg: TrainConfig) -> Tuple[MlpParams, TrainReport]:
    """Minimise the mean squared command error on ``ds``; ``p0`` is left untouched."""
    if ds.axis is not p0.axis:
        raise ConfigError(f"dataset axis {ds.axis.value} does not match policy axis {p0.axis.value}")
    if len(ds) == 0:
        raise DomainError("cannot train on an empty dataset")

    started = time.time()
    policy = _clone(p0)
    train_idx, held_idx = _split(len(ds), cfg.heldout_fraction, cfg.seed)
    inputs = ds.policy_inputs()
    x_train = torch.as_tensor(inputs[train_idx], dtype=DTYPE)
    y_train = torch.as_tensor(ds.inputs[train_idx], dtype=DTYPE)
    x_held = torch.as_tensor(inputs[held_idx], dtype=DTYPE)
    y_held = torch.as_tensor(ds.inputs[held_idx], dtype=DTYPE)

    if cfg.optimizer == "adam":
        optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.learning_rate)
    else:
        optimizer = torch.optim.SGD(policy.parameters(), lr=cfg.learning_rate)
    steps_per_epoch = max(1, math.ceil(len(x_train) / cfg.batch_size))
    scheduler = None
    if cfg.lr_schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs * steps_per_epoch)
    generator = torch.Generator().manual_seed(int(cfg.seed))
    report = TrainReport(axis=ds.axis.value)

    def record():
        mse, mae = _metrics(policy, x_train, y_train)
        h_mse, h_mae = _metrics(policy, x_held, y_held)
        report.train_mse.append(mse)
        report.train_mae.append(mae)
        report.heldout_mse.append(h_mse)
        report.heldout_mae.append(h_mae)

    logger.info(f"🚀 TRAIN: {ds.axis.value}-axis policy on {len(x_train)} samples "
                f"({len(x_held)} held out), {cfg.epochs} epochs, batch {cfg.batch_size}, "
                f"{cfg.optimizer} lr={cfg.learning_rate} ({cfg.lr_schedule})")
    with _single_thread():
        record()
        last_finite = report.train_mse[0]
        for epoch in range(1, cfg.epochs + 1):
            if cfg.shuffle:
                order = torch.randperm(len(x_train), generator=generator)
            else:
                order = torch.arange(len(x_train))
            for batch, start in enumerate(range(0, len(order), cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                optimizer.zero_grad(set_to_none=True)
                loss = _mse(policy, x_train[idx], y_train[idx])
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"loss became {loss.item()} at epoch {epoch}, batch {batch} "
                        f"(last finite epoch loss {last_finite:.6g})",
                        epoch=epoch, batch=batch, last_finite_loss=last_finite,
                    )
                loss.backward()
                optimizer.step()
                if scheduler is not None:
                    scheduler.step()
            record()
            if not math.isfinite(report.train_mse[-1]):
                raise TrainingDivergedError(f"epoch {epoch} ended with non-finite loss",
                                            epoch=epoch, batch=-1, last_finite_loss=last_finite)
            last_finite = report.train_mse[-1]
            logger.info(f"TRAIN: {ds.axis.value} epoch {epoch}/{cfg.epochs} "
                        f"mse={report.train_mse[-1]:.6g} held-out mse={report.heldout_mse[-1]:.6g}")

    report.wall_time_s = time.time() - started
    logger.info(f"✅ TRAIN: {ds.axis.value}-axis done in {report.wall_time_s:.2f}s, final mse={report.final_loss:.6g}")
    return policy, report


def _clone(p: MlpParams) -> MlpParams:
    copy = MlpParams(p.layer_sizes, p.input_shift.tolist(), p.input_scale.tolist(), p.output_scale, p.axis)
    copy.load_state_dict(p.state_dict())
    return copy


def write_loss_curve(report: TrainReport, path: PathLike) -> None:
    with atomic_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "train_mae", "heldout_mse", "heldout_mae"])
        for k in range(len(report.train_mse)):
            writer.writerow([k, fmt_float(report.train_mse[k]), fmt_float(report.train_mae[k]),
                             fmt_float(report.heldout_mse[k]), fmt_float(report.heldout_mae[k])])


# --- model files -------------------------------------------------------------

class _ModelFile(BaseModel):
    format: Literal["lyapunov-init-policy"]
    version: int
    axis: Axis
    layer_sizes: List[int]
    input_shift: List[float]
    input_scale: List[float]
    output_scale: float
    weights: List[List[List[float]]]
    biases: List[List[float]]


def save_model(p: MlpParams, path: PathLike) -> None:
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "axis": p.axis.value,
        "layer_sizes": p.layer_sizes,
        "input_shift": p.input_shift.tolist(),
        "input_scale": p.input_scale.tolist(),
        "output_scale": p.output_scale,
        "weights": [layer.weight.detach().tolist() for layer in p.layers],
        "biases": [layer.bias.detach().tolist() for layer in p.layers],
    }
    with atomic_write(path) as handle:
        json.dump(payload, handle, indent=1)
        handle.write("\n")
    logger.info(f"TRAIN: saved {p.axis.value}-axis model to {path}")


def load_model(path: PathLike) -> MlpParams:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise CorruptModelError(f"{path}: top level must be an object")
    if raw.get("version") != MODEL_VERSION:
        raise ModelVersionError(f"{path}: unsupported model version {raw.get('version')!r} (expected {MODEL_VERSION})")
    try:
        data = _ModelFile.model_validate(raw)
    except ValidationError as exc:
        raise CorruptModelError(f"{path}: invalid model file ({exc.error_count()} errors)") from exc

    try:
        policy = MlpParams(data.layer_sizes, data.input_shift, data.input_scale, data.output_scale, data.axis)
        with torch.no_grad():
            for layer, w, b in zip(policy.layers, data.weights, data.biases, strict=True):
                layer.weight.copy_(torch.tensor(w, dtype=DTYPE))
                layer.bias.copy_(torch.tensor(b, dtype=DTYPE))
    except (ValueError, RuntimeError, ConfigError) as exc:
        raise CorruptModelError(f"{path}: parameters inconsistent with layer sizes ({exc})") from exc
    return policy
