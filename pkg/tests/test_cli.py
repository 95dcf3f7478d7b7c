from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import List

import click
import pytest
from click.testing import CliRunner

from gmppi_flight.cli import _parse_numbers, main

SMALL_CONTROLLER = [
    "--set", "controller.n_rollouts=64",
    "--set", "controller.n_se3=32",
    "--set", "controller.block_size=32",
    "--set", "controller.horizon_steps=8",
    "--set", "controller.timesteps.near_steps=3",
]  # fmt: skip


def _invoke(args: List[str]):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def test_parse_numbers() -> None:
    assert _parse_numbers("0..3", int) == [0, 1, 2, 3]
    assert _parse_numbers("3, 5,7.5", float) == [3.0, 5.0, 7.5]
    with pytest.raises(click.BadParameter):
        _parse_numbers(" , ", int)


def test_track_hover_with_the_geometric_baseline(tmp_path: Path) -> None:
    result = _invoke(
        [
            "--out", str(tmp_path),
            "--set", "trajectory.kind=hover",
            "--set", "trajectory.params.hold=0.5",
            "track", "--controller", "se3",
        ]
    )  # fmt: skip
    assert result.exit_code == 0, result.output
    assert "se3 seed=0: pos_rmse=" in result.output
    with (tmp_path / "track" / "aggregate.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert [row["controller"] for row in rows] == ["se3"]
    assert rows[0]["success"] == "1"
    assert (tmp_path / "track" / "runs" / "hover_se3_0.csv").exists()


def test_track_runs_ablations_side_by_side(tmp_path: Path) -> None:
    result = _invoke(
        [
            "--out", str(tmp_path),
            "--seed", "1",
            *SMALL_CONTROLLER,
            "--set", "trajectory.params.hold=0.05",
            "--set", "sim.write_diagnostics=true",
            "track", "--traj", "hover", "--ablate", "mppi",
        ]
    )  # fmt: skip
    assert result.exit_code == 0, result.output
    runs = tmp_path / "track" / "runs"
    assert (runs / "hover_gmppi_1.csv").exists()
    assert (runs / "hover_mppi_1.csv").exists()
    lines = (runs / "hover_gmppi_1.diagnostics.jsonl").read_text().splitlines()
    assert len(lines) == 5
    assert json.loads(lines[0])["iteration"] == 0


def test_invalid_configuration_is_a_usage_error(tmp_path: Path) -> None:
    result = _invoke(["--out", str(tmp_path), "--set", "controller.bogus=1", "track"])
    assert result.exit_code == 2
    assert "invalid configuration" in result.output


def test_unknown_trajectory_is_a_usage_error(tmp_path: Path) -> None:
    result = _invoke(["--out", str(tmp_path), "track", "--traj", "spiral"])
    assert result.exit_code == 2


def test_forest_sweep_writes_aggregate_and_success_rates(tmp_path: Path) -> None:
    result = _invoke(
        [
            "--out", str(tmp_path),
            "--threads", "2",
            "--set", "controller.name=se3",
            "--set", "forest.bounds=[0, 4, -5, 5]",
            "--set", "forest.length=4",
            "forest", "--speeds", "4,8", "--seeds", "0..1",
        ]
    )  # fmt: skip
    assert result.exit_code == 0, result.output
    out = tmp_path / "forest"
    with (out / "aggregate.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert sorted((row["seed"], row["speed"]) for row in rows) == [
        ("0", "4.0"), ("0", "8.0"), ("1", "4.0"), ("1", "8.0")
    ]  # fmt: skip
    summary = json.loads((out / "success_by_speed.json").read_text())
    assert summary["controller"] == "se3"
    assert set(summary["success_rate"]) == {"4.0", "8.0"}
    assert (out / "forests" / "forest_0.json").exists()
    assert "speed=4 m/s success=" in result.output


def test_render_debug_dumps_a_depth_frame(tmp_path: Path) -> None:
    result = _invoke(["--out", str(tmp_path), "--seed", "2", "render-debug", "--speed", "3"])
    assert result.exit_code == 0, result.output
    pfm = tmp_path / "render_debug" / "depth_seed2.pfm"
    assert pfm.exists()
    meta = json.loads(pfm.with_suffix(".json").read_text())
    assert meta["camera"]["tilt_deg"] == 8.0
    assert meta["range_m"] == 13.0


def test_bench_reports_deterministic_timings(tmp_path: Path) -> None:
    result = _invoke(
        [
            "--out", str(tmp_path),
            *SMALL_CONTROLLER,
            "--set", "bench.iterations=3",
            "--set", "bench.threads=[1, 2]",
            "bench",
        ]
    )  # fmt: skip
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "bench" / "bench.json").read_text())
    assert report["deterministic"] is True
    assert [t["threads"] for t in report["timings"]] == [1, 2]
    assert "threads=2 median=" in result.output
