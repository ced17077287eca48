import json

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from pipeline.dataset_gen import Dataset, SearchConfig, generate_dataset, sample_roi
from pipeline.errors import ConfigError, CorruptModelError, DomainError, ModelFileError, ModelVersionError, \
    TrainingDivergedError
from pipeline.lyapunov_model import Axis, Roi
from pipeline.neural_policy import (
    DEFAULT_LAYER_SIZES,
    MlpParams,
    TrainConfig,
    backward,
    forward,
    gradient_check,
    load_model,
    mlp_init,
    save_model,
    train,
    write_loss_curve,
)

ROI = Roi()


def make_dataset(axis: Axis, n: int, labels, seed: int = 0) -> Dataset:
    states = sample_roi(ROI, n, seed=seed)
    labels = labels(states) if callable(labels) else np.full(n, float(labels))
    return Dataset(axis, states, labels, np.full(n, -1.0), roi=ROI, seed=seed)


def test_init_shape_and_determinism():
    p = mlp_init(seed=7)
    assert p.layer_sizes == list(DEFAULT_LAYER_SIZES)
    assert p.parameter_count() == 3 * 16 + 16 + 2 * (16 * 16 + 16) + 16 + 1
    same = mlp_init(seed=7)
    other = mlp_init(seed=8)
    for a, b in zip(p.parameters(), same.parameters()):
        assert torch.equal(a, b)
    assert not torch.equal(p.layers[0].weight, other.layers[0].weight)
    assert all(torch.count_nonzero(layer.bias) == 0 for layer in p.layers)


def test_init_scales_inputs_from_roi():
    p = mlp_init(axis=Axis.Y)
    np.testing.assert_allclose(p.input_shift.numpy(), [0.0, 7.55, 25.25])
    np.testing.assert_allclose(p.input_scale.numpy(), [1.0, 7.45, 24.75])


@pytest.mark.parametrize("sizes", [(2, 16, 1), (3, 16, 2), (3, 0, 1), (3,)])
def test_rejects_bad_layer_sizes(sizes):
    with pytest.raises(ConfigError):
        MlpParams(sizes)


def test_forward_shapes_and_command():
    p = mlp_init(seed=1)
    batch = sample_roi(ROI, 20, seed=2)[:, [0, 2, 3]]
    out = forward(p, batch)
    assert out.shape == (20,)
    assert forward(p, batch[0]).shape == (1,)
    np.testing.assert_allclose(p.command(batch[:, 0], batch[:, 1], batch[:, 2]), out)
    assert float(p.command(batch[3, 0], batch[3, 1], batch[3, 2])) == pytest.approx(out[3])


def test_output_never_exceeds_bound():
    p = mlp_init(seed=4, output_scale=30.0)
    inputs = np.random.default_rng(0).uniform(-100, 100, size=(500, 3))
    assert np.max(np.abs(forward(p, inputs))) <= p.output_bound() + 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    hidden = [int(h) for h in rng.integers(2, 9, size=int(rng.integers(1, 4)))]
    p = mlp_init([3, *hidden, 1], seed=seed, output_scale=1.0)
    with torch.no_grad():
        for layer in p.layers:
            layer.bias.uniform_(-0.5, 0.5, generator=torch.Generator().manual_seed(seed))
    batch = int(rng.integers(1, 17))
    inputs = sample_roi(ROI, batch, seed=seed)[:, [0, 2, 3]]
    targets = rng.uniform(-1.0, 1.0, size=batch)
    assert gradient_check(p, inputs, targets) <= 1e-4


def test_backward_returns_one_gradient_per_parameter():
    p = mlp_init(seed=0)
    grads = backward(p, [[0.1, 10.0, 5.0], [-0.3, 2.0, 40.0]], [1.0, -2.0])
    assert [g.shape for g in grads] == [tuple(param.shape) for param in p.parameters()]
    with pytest.raises(DomainError):
        backward(p, np.empty((0, 3)), [])


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0)
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=-1.0)


def test_train_rejects_mismatched_axis_and_empty_data():
    p0 = mlp_init(axis=Axis.X)
    with pytest.raises(ConfigError):
        train(p0, make_dataset(Axis.Y, 10, 0.0), TrainConfig())
    empty = Dataset(Axis.X, np.empty((0, 5)), np.empty(0), np.empty(0))
    with pytest.raises(DomainError):
        train(p0, empty, TrainConfig())


def test_constant_labels_are_learned():
    ds = make_dataset(Axis.X, 512, 2.0)
    p0 = mlp_init(seed=3, output_scale=1.0)
    cfg = TrainConfig(epochs=50, batch_size=16, learning_rate=1e-2, heldout_fraction=0.0)
    policy, report = train(p0, ds, cfg)
    assert len(report.train_mse) == 51
    assert report.final_loss < 1e-4
    np.testing.assert_allclose(forward(policy, ds.policy_inputs()), 2.0, atol=0.05)


def test_epoch_zero_loss_is_the_untrained_mean_squared_error():
    ds = make_dataset(Axis.X, 400, lambda states: states[:, 0] * (states[:, 2] + 2.0 * states[:, 3]), seed=6)
    p0 = mlp_init(seed=1, output_scale=30.0)
    _, report = train(p0, ds, TrainConfig(epochs=1, heldout_fraction=0.0))
    err = forward(p0, ds.policy_inputs()) - ds.inputs
    assert report.train_mse[0] == pytest.approx(float(np.mean(err ** 2)), rel=1e-10, abs=1e-10)
    assert report.train_mae[0] == pytest.approx(float(np.mean(np.abs(err))), rel=1e-10, abs=1e-10)


def test_linear_labels_reach_small_heldout_error():
    ds = make_dataset(Axis.X, 4000, lambda states: 3.0 * states[:, 0], seed=1)
    p0 = mlp_init(seed=2, output_scale=5.0)
    cfg = TrainConfig(epochs=200, batch_size=64, learning_rate=3e-3, seed=4)
    _, report = train(p0, ds, cfg)
    assert report.heldout_rmse < 0.05 * float(np.std(ds.inputs))


def test_training_on_generated_data_reduces_loss():
    ds, _ = generate_dataset(Axis.X, ROI, 20_000, SearchConfig(), seed=1)
    _, report = train(mlp_init(seed=3), ds, TrainConfig())
    assert len(report.train_mse) == 6
    assert report.train_mse[5] < report.train_mse[1]


def test_training_is_deterministic_and_leaves_input_untouched():
    ds = make_dataset(Axis.Y, 300, lambda states: 2.0 * states[:, 1])
    p0 = mlp_init(seed=5, axis=Axis.Y, output_scale=3.0)
    before = [param.clone() for param in p0.parameters()]
    cfg = TrainConfig(epochs=3, batch_size=32, seed=9)
    a, report_a = train(p0, ds, cfg)
    b, report_b = train(p0, ds, cfg)
    assert report_a.train_mse == report_b.train_mse
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    for param, original in zip(p0.parameters(), before):
        assert torch.equal(param, original)


def test_nan_label_raises_divergence():
    ds = make_dataset(Axis.X, 64, 1.0)
    ds.inputs[10] = np.nan
    cfg = TrainConfig(epochs=2, batch_size=64, heldout_fraction=0.0, shuffle=False)
    with pytest.raises(TrainingDivergedError) as info:
        train(mlp_init(), ds, cfg)
    assert info.value.epoch == 1
    assert info.value.batch == 0


def test_loss_curve_csv(tmp_path):
    ds = make_dataset(Axis.X, 200, 1.0)
    _, report = train(mlp_init(), ds, TrainConfig(epochs=3, batch_size=50))
    write_loss_curve(report, tmp_path / "loss_x.csv")
    lines = (tmp_path / "loss_x.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,train_mse,train_mae,heldout_mse,heldout_mae"
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1", "2", "3"]


def test_model_file_round_trip(tmp_path):
    p = mlp_init(seed=11, axis=Axis.Y)
    save_model(p, tmp_path / "model_y.json")
    loaded = load_model(tmp_path / "model_y.json")
    assert loaded.axis is Axis.Y
    inputs = sample_roi(ROI, 50, seed=1)[:, [1, 2, 3]]
    np.testing.assert_array_equal(forward(loaded, inputs), forward(p, inputs))
    save_model(loaded, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == (tmp_path / "model_y.json").read_bytes()


def test_model_file_errors(tmp_path):
    path = tmp_path / "model.json"
    save_model(mlp_init(), path)
    payload = json.loads(path.read_text(encoding="utf-8"))

    payload["version"] = 2
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ModelVersionError):
        load_model(path)

    payload["version"] = 1
    payload["weights"][0] = payload["weights"][0][:-1]
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(CorruptModelError):
        load_model(path)

    path.write_text('{"format": "lyapunov-init-policy", "vers', encoding="utf-8")
    with pytest.raises(CorruptModelError) as info:
        load_model(path)
    assert isinstance(info.value, (ModelFileError, OSError))


def test_lr_schedule_is_configurable():
    ds = make_dataset(Axis.X, 64, 1.0)
    constant = TrainConfig(epochs=4, batch_size=16, lr_schedule="constant", heldout_fraction=0.0)
    cosine = constant.model_copy(update={"lr_schedule": "cosine"})
    a, _ = train(mlp_init(seed=2), ds, constant)
    b, _ = train(mlp_init(seed=2), ds, cosine)
    assert any(not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))
    with pytest.raises(ValidationError):
        TrainConfig(lr_schedule="step")


def test_default_training_reaches_heldout_targets(default_run):
    for axis in (Axis.X, Axis.Y):
        report = default_run.train_reports[axis]
        std = float(np.std(default_run.datasets[axis].inputs))
        floor = default_run.yaw_floor_rmse[axis]
        assert report.train_mse[5] < report.train_mse[1]
        # Error beyond what the unseen yaw rate forces on every three-input policy.
        assert report.heldout_mse[-1] - floor ** 2 < (0.05 * std) ** 2, axis

    y_std = float(np.std(default_run.datasets[Axis.Y].inputs))
    assert default_run.train_reports[Axis.Y].heldout_rmse < 0.05 * y_std
