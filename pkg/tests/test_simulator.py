from __future__ import annotations

import math

import numpy as np
import pytest

from gmppi_flight.core import IDENTITY_QUAT, P, Q, STATE_SIZE, State, quat_from_yaw
from gmppi_flight.forest import Forest, Tree
from gmppi_flight.gmppi import GmppiConfig, GmppiController
from gmppi_flight.simulator import (
    LOG_COLUMNS,
    RunLog,
    RunMetrics,
    RunResult,
    Se3Baseline,
    SimSettings,
    SweepOutcome,
    compute_metrics,
    make_controller,
    run_closed_loop,
    run_sweep,
    success_rate_by,
)
from gmppi_flight.trajectories import HoverTrajectory


def _log(n: int, dt: float = 0.01) -> RunLog:
    states = np.zeros((n, STATE_SIZE))
    states[:, Q] = IDENTITY_QUAT
    return RunLog(
        t=np.arange(n) * dt,
        states=states,
        commands=np.zeros((n, 4)),
        ref_positions=np.zeros((n, 3)),
        ref_headings=np.zeros(n),
        clearances=np.full(n, np.inf),
    )


def _result(success: bool) -> RunResult:
    metrics = RunMetrics(0.0, 0.0, 0.0, 0.0, success, math.inf, 1, None if success else "collision")
    return RunResult(metrics, _log(1))


def test_perfect_tracking_scores_zero() -> None:
    m = compute_metrics(_log(50))
    assert m.pos_rmse == 0.0 and m.heading_rmse == 0.0
    assert m.max_speed == 0.0 and m.max_accel == 0.0
    assert m.success and m.iterations == 50


def test_constant_offset_and_heading_error() -> None:
    log = _log(50)
    log.states[:, 0] = 1.0
    log.states[:, Q] = quat_from_yaw(0.2)
    m = compute_metrics(log)
    assert m.pos_rmse == pytest.approx(1.0)
    assert m.heading_rmse == pytest.approx(0.2)


def test_sinusoidal_error_rmse_is_amplitude_over_root_two() -> None:
    log = _log(2000, dt=0.001)
    log.states[:, 0] = 0.3 * np.sin(2.0 * np.pi * log.t)
    assert compute_metrics(log).pos_rmse == pytest.approx(0.3 / math.sqrt(2.0), rel=1e-6)


def test_single_velocity_spike_is_filtered_out_of_max_accel() -> None:
    log = _log(100)
    log.states[:, 3] = 2.0 * log.t
    assert compute_metrics(log).max_accel == pytest.approx(2.0)
    log.states[40, 3] += 5.0
    assert compute_metrics(log).max_accel == pytest.approx(2.0)


def test_empty_log_is_rejected() -> None:
    with pytest.raises(ValueError):
        compute_metrics(_log(0))


def test_log_table_matches_columns() -> None:
    log = _log(4)
    log.states[:, P] = np.arange(12.0).reshape(4, 3)
    table = log.table()
    assert table.shape == (4, len(LOG_COLUMNS))
    back = RunLog.from_table(table)
    np.testing.assert_array_equal(back.states, log.states)
    np.testing.assert_array_equal(back.t, log.t)


def test_geometric_baseline_holds_hover(hover_ref: HoverTrajectory) -> None:
    result = run_closed_loop(Se3Baseline(hover_ref), hover_ref, settings=SimSettings())
    assert result.metrics.success
    assert result.metrics.pos_rmse < 0.01
    assert result.metrics.iterations == 500
    assert result.diagnostics == []


def test_short_gmppi_hover_collects_diagnostics(small_cfg: GmppiConfig) -> None:
    reference = HoverTrajectory(position=(0.0, 0.0, 2.0), hold=0.2)
    with GmppiController(small_cfg, reference, seed=0) as controller:
        result = run_closed_loop(controller, reference, settings=SimSettings(), params=small_cfg.vehicle)
    assert result.metrics.success
    assert len(result.diagnostics) == 20
    assert result.metrics.max_speed < 0.5


def test_ground_truth_collision_fails_the_run(hover_ref: HoverTrajectory) -> None:
    trees = Forest(trees=(Tree(0.0, 0.0, 0.3, 5.0),))
    result = run_closed_loop(Se3Baseline(hover_ref), hover_ref, trees, None, SimSettings())
    assert not result.metrics.success
    assert result.metrics.failure.startswith("collision")
    assert result.metrics.iterations == 1
    assert result.metrics.min_clearance < 0


def test_collision_without_stopping_flies_the_whole_reference(hover_ref: HoverTrajectory) -> None:
    trees = Forest(trees=(Tree(0.0, 0.0, 0.3, 5.0),))
    settings = SimSettings(stop_on_collision=False)
    result = run_closed_loop(Se3Baseline(hover_ref), hover_ref, trees, None, settings)
    assert not result.metrics.success
    assert result.metrics.iterations == 500


def test_start_far_off_the_reference_diverges(hover_ref: HoverTrajectory) -> None:
    start = State.at_rest((500.0, 0.0, 2.0))
    result = run_closed_loop(Se3Baseline(hover_ref), hover_ref, settings=SimSettings(), start=start)
    assert result.metrics.failure.startswith("diverged")
    assert result.metrics.iterations == 1


def test_make_controller_names(hover_ref: HoverTrajectory, small_cfg: GmppiConfig) -> None:
    assert isinstance(make_controller("se3", small_cfg, hover_ref), Se3Baseline)
    controller = make_controller("mppi", small_cfg, hover_ref)
    assert controller.name == "mppi"
    assert controller.cfg.no_se3 and controller.cfg.const_dt
    controller.close()
    with pytest.raises(ValueError, match="unknown controller"):
        make_controller("pid", small_cfg, hover_ref)


def test_sweep_records_errors_and_sorts_by_key() -> None:
    def boom() -> RunResult:
        raise RuntimeError("camera unplugged")

    jobs = {(2, 5.0): lambda: _result(True), (1, 5.0): boom, (0, 3.0): lambda: _result(False)}
    outcomes = run_sweep(jobs, workers=3)
    assert [o.key for o in outcomes] == [(0, 3.0), (1, 5.0), (2, 5.0)]
    assert outcomes[1].result is None
    assert outcomes[1].error == "RuntimeError: camera unplugged"
    assert outcomes[0].error is None and outcomes[2].result.metrics.success


def test_success_rate_grouped_by_speed() -> None:
    outcomes = [
        SweepOutcome((0, 3.0), _result(True)),
        SweepOutcome((1, 3.0), _result(False)),
        SweepOutcome((0, 5.0), _result(False)),
        SweepOutcome((1, 5.0), None, "ValueError: bad"),
    ]
    assert success_rate_by(outcomes, position=1) == {3.0: 0.5, 5.0: 0.0}
    assert success_rate_by(outcomes, position=0) == {0: 0.5, 1: 0.0}


def test_settings_validation() -> None:
    with pytest.raises(ValueError):
        SimSettings(dt=0.0)


class _FailingBaseline(Se3Baseline):
    def __init__(self, reference: HoverTrajectory, fail_after: int) -> None:
        super().__init__(reference)
        self.calls = 0
        self.fail_after = fail_after

    def compute(self, state, t, frame):
        self.calls += 1
        if self.calls > self.fail_after:
            raise FloatingPointError("solver blew up")
        return super().compute(state, t, frame)


def test_controller_exception_fails_the_run(hover_ref: HoverTrajectory) -> None:
    result = run_closed_loop(_FailingBaseline(hover_ref, 3), hover_ref, settings=SimSettings())
    assert not result.metrics.success
    assert result.metrics.failure.startswith("controller error (FloatingPointError: solver blew up)")
    assert result.metrics.iterations == 4
    assert np.all(np.isnan(result.log.commands[-1]))
    assert np.all(np.isfinite(result.log.commands[:-1]))


def test_reused_controller_keeps_its_own_sink(small_cfg: GmppiConfig) -> None:
    reference = HoverTrajectory(position=(0.0, 0.0, 2.0), hold=0.05)
    seen = []
    sink = seen.append
    with GmppiController(small_cfg, reference, seed=0, diagnostics_sink=sink) as controller:
        first = run_closed_loop(controller, reference, params=small_cfg.vehicle)
        assert controller.diagnostics_sink is sink
        second = run_closed_loop(controller, reference, params=small_cfg.vehicle)
        assert controller.diagnostics_sink is sink
    assert len(first.diagnostics) == len(second.diagnostics) == 5
    assert len(seen) == 10
    assert [d.iteration for d in seen] == list(range(10))
