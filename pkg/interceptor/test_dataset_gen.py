import json
import math

import numpy as np
import pytest

from pipeline.dataset_gen import (
    CSV_HEADER,
    Dataset,
    GenerationReport,
    SearchConfig,
    generate_dataset,
    recheck,
    sample_roi,
    solve_input_closed_form,
    solve_input_numeric,
    yaw_spread,
)
from pipeline.errors import ConfigError, DegenerateStateError, InfeasibleInputError
from pipeline.lyapunov_model import Axis, InterceptState, Interval, Roi, d_x, d_y

ROI = Roi()


def test_closed_form_x_example():
    s = InterceptState(px=0.5, py=0.0, vz=15.0, cz=10.0, wy=0.0)
    vx = solve_input_closed_form(Axis.X, s, 2.0)
    assert vx == pytest.approx(17.5)
    assert d_x(s, vx) == pytest.approx(-0.5)


def test_closed_form_y_example():
    s = InterceptState(px=0.0, py=-0.4, vz=10.0, cz=2.0, wy=0.0)
    # eta chosen so that -eta * py^2 = -0.4
    vy = solve_input_closed_form(Axis.Y, s, 2.5)
    assert vy == pytest.approx(-6.0)
    assert d_y(s, vy) == pytest.approx(-0.4)


def test_closed_form_with_yaw_rate():
    s = InterceptState(px=0.5, py=0.0, vz=15.0, cz=10.0, wy=0.2)
    vx = solve_input_closed_form(Axis.X, s, 2.0)
    assert vx == pytest.approx(15.0)
    assert d_x(s, vx) == pytest.approx(-0.5)


def test_closed_form_degenerate_state():
    with pytest.raises(DegenerateStateError):
        solve_input_closed_form(Axis.X, InterceptState(0.0, 0.3, 15.0, 10.0, 0.1), 2.0)


def test_numeric_matches_closed_form():
    s = InterceptState(px=0.5, py=0.0, vz=15.0, cz=10.0, wy=0.0)
    cfg = SearchConfig(eta=2.0, input_bounds=Interval(lo=-50.0, hi=50.0), scheme="numeric")
    assert solve_input_numeric(Axis.X, s, cfg) == pytest.approx(17.5, abs=1e-6)


def test_numeric_zero_coordinate_is_infeasible():
    s = InterceptState(px=0.0, py=0.2, vz=15.0, cz=10.0, wy=0.0)
    with pytest.raises(InfeasibleInputError):
        solve_input_numeric(Axis.X, s, SearchConfig(scheme="numeric"))


def test_numeric_infeasible_reports_best_input():
    s = InterceptState(px=0.5, py=0.0, vz=15.0, cz=10.0, wy=0.0)
    cfg = SearchConfig(input_bounds=Interval(lo=-5.0, hi=5.0), scheme="numeric")
    with pytest.raises(InfeasibleInputError) as info:
        solve_input_numeric(Axis.X, s, cfg)
    # D decreases with u here, so the best attempt is the upper bound
    assert info.value.best_u == 5.0
    assert info.value.best_d == pytest.approx(d_x(s, 5.0))
    assert info.value.best_d > 0


def test_numeric_returns_bound_when_optimum_outside():
    s = InterceptState(px=0.5, py=0.0, vz=15.0, cz=10.0, wy=0.0)
    cfg = SearchConfig(input_bounds=Interval(lo=-10.0, hi=10.0), scheme="numeric")
    u = solve_input_numeric(Axis.X, s, cfg)
    assert u == 10.0
    assert d_x(s, u) < 0


@pytest.mark.parametrize("axis", [Axis.X, Axis.Y])
def test_numeric_agrees_with_closed_form_on_random_states(axis):
    cfg = SearchConfig(scheme="numeric")
    checked = 0
    for row in sample_roi(ROI, 4000, seed=11):
        s = InterceptState.from_array(row)
        exact = solve_input_closed_form(axis, s, cfg.eta)
        if not cfg.input_bounds.lo < exact < cfg.input_bounds.hi:
            continue
        assert solve_input_numeric(axis, s, cfg) == pytest.approx(exact, abs=1e-6)
        checked += 1
        if checked == 1000:
            break
    assert checked == 1000


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(eta=0.0)
    with pytest.raises(ValueError):
        SearchConfig(tolerance=0.0)


def test_sample_roi_uniform():
    states = sample_roi(ROI, 1000, seed=3)
    assert states.shape == (1000, 5)
    assert ROI.contains(states).all()
    assert np.array_equal(states, sample_roi(ROI, 1000, seed=3))
    assert not np.array_equal(states, sample_roi(ROI, 1000, seed=4))


def test_sample_roi_grid():
    states = sample_roi(ROI, 243, scheme="grid")
    assert states.shape == (243, 5)
    assert ROI.contains(states).all()
    assert sorted(set(states[:, 3])) == [0.5, 25.25, 50.0]
    with pytest.raises(ConfigError):
        sample_roi(ROI, 242, scheme="grid")


def test_generate_dataset_satisfies_decrease_condition():
    ds, report = generate_dataset(Axis.X, ROI, 2000, SearchConfig(), seed=1)
    assert report.requested == 2000
    assert report.retained == len(ds)
    assert report.retained + report.infeasible == 2000
    assert report.infeasible_rate < 0.5
    assert ROI.contains(ds.states).all()
    assert np.all(ds.achieved_d < 0)
    np.testing.assert_allclose(recheck(ds), ds.achieved_d, rtol=0, atol=1e-12)
    assert np.all(np.abs(ds.inputs) <= 30.0)
    assert all(sample.achieved_d < 0 for sample in ds.samples)


def test_generate_dataset_empty():
    ds, report = generate_dataset(Axis.Y, ROI, 0, SearchConfig(), seed=1)
    assert len(ds) == 0
    assert report.requested == 0
    assert report.infeasible_rate == 0.0


def test_degenerate_states_are_kept_with_zero_decrease():
    ds, report = generate_dataset(Axis.X, ROI, 243, SearchConfig(), sampling="grid")
    assert report.degenerate == 81
    zero = ds.states[:, 0] == 0.0
    assert zero.sum() == 81
    assert np.all(ds.achieved_d[zero] == 0.0)
    assert np.all(ds.achieved_d[~zero] < 0)


@pytest.mark.parametrize("axis", [Axis.X, Axis.Y])
def test_labels_follow_the_coordinate_sign_without_yaw(axis):
    still = ROI.model_copy(update={"wy": Interval(lo=-1e-12, hi=1e-12)})
    ds, report = generate_dataset(axis, still, 3000, SearchConfig(), seed=12)
    assert report.infeasible == 0
    coord = ds.states[:, axis.coordinate_index]
    np.testing.assert_array_equal(np.sign(ds.inputs), np.sign(coord))


def test_x_labels_spread_beyond_five_percent_over_unseen_yaw():
    cfg = SearchConfig()
    ds, _ = generate_dataset(Axis.X, ROI, 100_000, cfg, seed=1)
    floor = math.sqrt(float(np.mean(yaw_spread(ds, cfg))))
    assert floor > 0.05 * float(np.std(ds.inputs))

    # Independent lower bound: states whose label stays unclamped for every wy.
    px, vz, cz = ds.states[:, 0], ds.states[:, 2], ds.states[:, 3]
    half = ROI.wy.hi
    unclamped = np.abs(px) * (vz + cfg.eta * cz) + cz * (1 + px ** 2) * half < cfg.input_bounds.hi
    analytic = np.mean(np.where(unclamped, (cz * (1 + px ** 2)) ** 2 * (2 * half) ** 2 / 12, 0.0))
    assert floor ** 2 >= analytic * 0.99
    assert math.sqrt(analytic) > 0.05 * float(np.std(ds.inputs))


def test_yaw_spread_vanishes_for_y_labels_when_px_is_zero():
    states = sample_roi(ROI, 50, seed=3)
    states[:, 0] = 0.0
    ds = Dataset(Axis.Y, states, np.zeros(50), np.full(50, -1.0))
    np.testing.assert_allclose(yaw_spread(ds, SearchConfig()), 0.0, atol=1e-20)
    with pytest.raises(ConfigError):
        yaw_spread(ds, SearchConfig(), points=0)


def test_numeric_and_closed_form_datasets_agree():
    closed, closed_report = generate_dataset(Axis.Y, ROI, 150, SearchConfig(), seed=9)
    numeric, numeric_report = generate_dataset(Axis.Y, ROI, 150, SearchConfig(scheme="numeric"), seed=9, workers=3)
    assert closed_report.to_dict() == numeric_report.to_dict()
    np.testing.assert_array_equal(closed.states, numeric.states)
    np.testing.assert_allclose(numeric.inputs, closed.inputs, rtol=0, atol=1e-6)


def test_csv_is_deterministic_and_readable(tmp_path):
    first, _ = generate_dataset(Axis.Y, ROI, 500, SearchConfig(), seed=5)
    second, _ = generate_dataset(Axis.Y, ROI, 500, SearchConfig(), seed=5)
    first.write_csv(tmp_path / "a.csv")
    second.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    header = (tmp_path / "a.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == ",".join(CSV_HEADER)

    loaded = Dataset.read_csv(tmp_path / "a.csv", seed=5)
    assert loaded.axis is Axis.Y
    np.testing.assert_array_equal(loaded.states, first.states)
    np.testing.assert_array_equal(loaded.inputs, first.inputs)
    assert not list(tmp_path.glob(".*.tmp"))


def test_read_csv_rejects_mixed_axes(tmp_path):
    path = tmp_path / "mixed.csv"
    path.write_text(",".join(CSV_HEADER) + "\n"
                    "x,0.5,0.0,15.0,10.0,0.0,17.5,-0.5\n"
                    "y,0.0,-0.4,10.0,2.0,0.0,-6.0,-0.4\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        Dataset.read_csv(path)


def test_read_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("px,py,u\n0.1,0.2,3.0\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        Dataset.read_csv(path)


def test_generation_report_serialization():
    report = GenerationReport(axis="x", requested=10, solved=6, clamped_at_bound=2, degenerate=0, infeasible=2,
                              elapsed_s=1.23)
    data = json.loads(report.to_text())
    assert data["retained"] == 8
    assert math.isclose(data["infeasible_rate"], 0.2)
    assert "elapsed_s" not in data
