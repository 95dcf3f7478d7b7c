"""End-to-end flights. The long ones are marked ``slow`` and skipped unless ``-m slow`` is given."""

from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np
import pytest

from gmppi_flight.artifacts import write_run_log
from gmppi_flight.config import ScenarioConfig, load_scenario
from gmppi_flight.gmppi import GmppiConfig
from gmppi_flight.simulator import RunResult, SimSettings, make_controller, run_closed_loop
from gmppi_flight.trajectories import HoverTrajectory, LineTrajectory, ReferenceTrajectory


def _fly(
    name: str, cfg: GmppiConfig, reference: ReferenceTrajectory, seed: int, threads: int = 1, **world: object
) -> RunResult:
    controller = make_controller(name, cfg, reference, seed=seed, threads=threads)
    try:
        return run_closed_loop(
            controller,
            reference,
            world.get("forest"),
            world.get("camera"),
            world.get("settings", SimSettings()),
            cfg.vehicle,
            cfg.tracking,
        )
    finally:
        controller.close()


def test_run_logs_are_identical_for_any_thread_count(small_cfg: GmppiConfig, tmp_path: Path) -> None:
    config = ScenarioConfig()
    reference = LineTrajectory(start=(0.0, 0.0, 1.5), length=0.6, speed=3.0)
    world = {"forest": config.build_forest(0), "camera": config.build_camera(3.0)}
    blobs = []
    for threads in (1, 4, 8):
        result = _fly("gmppi", small_cfg, reference, seed=9, threads=threads, **world)
        path = tmp_path / f"run_{threads}.csv"
        write_run_log(path, result.log)
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]


@pytest.mark.slow
def test_gmppi_hover_stays_still() -> None:
    cfg = GmppiConfig()
    reference = HoverTrajectory(position=(0.0, 0.0, 2.0), hold=3.0)
    metrics = _fly("gmppi", cfg, reference, seed=0, threads=4).metrics
    assert metrics.success
    assert metrics.max_speed < 0.3


@pytest.mark.slow
def test_gmppi_tracks_the_figure8_nearly_as_well_as_the_geometric_controller() -> None:
    config = load_scenario(overrides=["trajectory.kind=figure8", "trajectory.params.speed=8"])
    cfg = config.build_gmppi()
    reference = config.build_reference()
    baseline = _fly("se3", cfg, reference, seed=0).metrics.pos_rmse
    ours: List[float] = [_fly("gmppi", cfg, reference, seed=s, threads=4).metrics.pos_rmse for s in range(5)]
    assert max(ours) <= 1.5 * baseline


@pytest.mark.slow
def test_geometric_rollouts_and_schedules_pay_off() -> None:
    config = load_scenario(overrides=["trajectory.kind=figure8", "trajectory.params.speed=8"])
    cfg = config.build_gmppi()
    reference = config.build_reference()

    def median_rmse(name: str) -> float:
        return float(np.median([_fly(name, cfg, reference, seed=s, threads=4).metrics.pos_rmse for s in range(5)]))

    assert median_rmse("gmppi") < median_rmse("no_se3")

    hover = HoverTrajectory(position=(0.0, 0.0, 2.0), hold=3.0)
    full = _fly("gmppi", cfg, hover, seed=0, threads=4).metrics.max_speed
    flat = _fly("const_noise", cfg, hover, seed=0, threads=4).metrics.max_speed
    assert full < flat


@pytest.mark.slow
@pytest.mark.parametrize(("speed", "required"), [(3.0, 1.0), (5.0, 1.0), (7.0, 0.8)])
def test_forest_lines_are_flown_without_collisions(speed: float, required: float) -> None:
    config = ScenarioConfig()
    cfg = config.build_gmppi()
    reference = config.build_line(speed)
    camera = config.build_camera(speed)
    successes = [
        _fly("gmppi", cfg, reference, seed=s, threads=4, forest=config.build_forest(s), camera=camera).metrics.success
        for s in range(10)
    ]
    assert np.mean(successes) >= required
