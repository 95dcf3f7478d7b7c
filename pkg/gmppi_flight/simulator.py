"""Closed-loop flights: controller, simulated depth camera and plant stepped at the control rate."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.ndimage import median_filter

from .core import (
    COMMAND_SIZE,
    P,
    Q,
    STATE_SIZE,
    V,
    Command,
    CommandLimits,
    FloatArray,
    State,
    VehicleParams,
    heading_angle_error,
    norm3,
)
from .dynamics import DEFAULT_TRACKING, BodyRateTracking, rk4_step
from .forest import Forest, clearance
from .gmppi import GmppiConfig, GmppiController, IterationDiagnostics
from .perception import CameraModel, DepthFrame
from .rendering import render_depth
from .se3_controller import DEFAULT_MAX_TILT_DEG, Se3Gains, flat_reference, reference_state, se3_command
from .trajectories import ReferenceTrajectory

logger = logging.getLogger(__name__)

LOG_COLUMNS: Tuple[str, ...] = (
    "t",
    "px", "py", "pz",
    "vx", "vy", "vz",
    "qw", "qx", "qy", "qz",
    "wx", "wy", "wz",
    "thrust", "wcx", "wcy", "wcz",
    "ref_px", "ref_py", "ref_pz", "ref_heading",
)  # fmt: skip
CONTROLLERS = ("gmppi", "se3", "no_se3", "const_dt", "const_noise", "mppi")


class Controller(Protocol):
    name: str

    def compute(self, state: State, t: float, frame: Optional[DepthFrame]) -> Command: ...

    def close(self) -> None: ...


class Se3Baseline:
    """Standalone geometric controller tracking the flat reference at the current time."""

    name = "se3"

    def __init__(
        self,
        reference: ReferenceTrajectory,
        gains: Se3Gains | None = None,
        params: VehicleParams | None = None,
        limits: CommandLimits | None = None,
        max_tilt_deg: float = DEFAULT_MAX_TILT_DEG,
    ) -> None:
        self.reference = reference
        self.gains = gains or Se3Gains()
        self.params = params or VehicleParams()
        self.limits = limits or CommandLimits()
        self.max_tilt_deg = max_tilt_deg

    def compute(self, state: State, t: float, frame: Optional[DepthFrame]) -> Command:
        ref, _ = flat_reference(self.reference, t, self.params)
        return se3_command(state, ref, self.gains, self.params, self.limits, self.max_tilt_deg)

    def close(self) -> None:
        pass


def make_controller(
    name: str,
    cfg: GmppiConfig,
    reference: ReferenceTrajectory,
    seed: int = 0,
    threads: int = 1,
    diagnostics_sink: Optional[Callable[[IterationDiagnostics], None]] = None,
) -> Controller:
    if name == "se3":
        return Se3Baseline(reference, cfg.base_gains, cfg.vehicle, cfg.limits, cfg.max_tilt_deg)
    if name not in CONTROLLERS:
        raise ValueError(f"unknown controller {name!r}; expected one of {list(CONTROLLERS)}")
    controller = GmppiController(
        cfg.variant(name), reference, seed=seed, threads=threads, diagnostics_sink=diagnostics_sink
    )
    controller.name = name
    return controller


@dataclass(frozen=True)
class SimSettings:
    dt: float = 0.01
    camera_rate: float = 30.0
    sensor_range: float = 13.0
    extra_time: float = 0.0
    divergence_distance: float = 100.0
    goal_tolerance: float = 2.0
    stop_on_collision: bool = True
    render_ground: bool = True

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.camera_rate <= 0:
            raise ValueError("dt and camera rate must be positive")


@dataclass(eq=False)
class RunLog:
    """One row per control step: state before the step, the command applied over it and the reference."""

    t: FloatArray
    states: FloatArray
    commands: FloatArray
    ref_positions: FloatArray
    ref_headings: FloatArray
    clearances: FloatArray
    failure: Optional[str] = None
    goal: Optional[FloatArray] = None

    def __len__(self) -> int:
        return len(self.t)

    def table(self) -> FloatArray:
        """Rows laid out as :data:`LOG_COLUMNS`."""
        return np.column_stack((self.t, self.states, self.commands, self.ref_positions, self.ref_headings))

    @classmethod
    def from_table(cls, table: FloatArray) -> RunLog:
        table = np.atleast_2d(table)
        s, c = 1 + STATE_SIZE, 1 + STATE_SIZE + COMMAND_SIZE
        return cls(
            t=table[:, 0],
            states=table[:, 1:s],
            commands=table[:, s:c],
            ref_positions=table[:, c : c + 3],
            ref_headings=table[:, c + 3],
            clearances=np.full(len(table), np.inf),
        )


@dataclass(frozen=True)
class RunMetrics:
    pos_rmse: float
    heading_rmse: float
    max_speed: float
    max_accel: float
    success: bool
    min_clearance: float
    iterations: int
    failure: Optional[str] = None
    final_distance: float = 0.0

    def summary(self) -> str:
        return (
            f"pos_rmse={self.pos_rmse:.4f} heading_rmse={self.heading_rmse:.4f} "
            f"max_v={self.max_speed:.3f} max_a={self.max_accel:.3f}"
        )


@dataclass(eq=False)
class RunResult:
    metrics: RunMetrics
    log: RunLog
    diagnostics: List[IterationDiagnostics] = field(default_factory=list)


def compute_metrics(log: RunLog, accel_window: int = 5) -> RunMetrics:
    """Tracking errors and motion extrema of a run.

    Acceleration comes from finite differences of the logged velocity, median filtered over
    ``accel_window`` samples.
    """
    if len(log) == 0:
        raise ValueError("cannot compute metrics of an empty log")
    p = log.states[:, P]
    v = log.states[:, V]
    pos_err = norm3(p - log.ref_positions)
    pos_rmse = float(np.sqrt(np.mean(pos_err * pos_err)))

    h_ref = np.stack((np.cos(log.ref_headings), np.sin(log.ref_headings), np.zeros(len(log))), axis=-1)
    angle, _ = heading_angle_error(log.states[:, Q], h_ref)
    heading_rmse = float(np.sqrt(np.mean(angle * angle)))

    speeds = norm3(v)
    if len(log) > 1:
        accel = norm3(np.diff(v, axis=0)) / np.diff(log.t)
        max_accel = float(np.max(median_filter(accel, size=accel_window, mode="nearest")))
    else:
        max_accel = 0.0

    final_distance = 0.0 if log.goal is None else float(norm3(p[-1] - log.goal))
    finite_clearance = log.clearances[np.isfinite(log.clearances)]
    return RunMetrics(
        pos_rmse=pos_rmse,
        heading_rmse=heading_rmse,
        max_speed=float(np.max(speeds)),
        max_accel=max_accel,
        success=log.failure is None,
        min_clearance=float(np.min(finite_clearance)) if finite_clearance.size else math.inf,
        iterations=len(log),
        failure=log.failure,
        final_distance=final_distance,
    )


def _heading_angle(h: FloatArray) -> float:
    return float(np.arctan2(h[1], h[0]))


def run_closed_loop(  # noqa: PLR0913
    controller: Controller,
    reference: ReferenceTrajectory,
    forest: Optional[Forest] = None,
    camera: Optional[CameraModel] = None,
    settings: SimSettings | None = None,
    params: VehicleParams | None = None,
    tracking: BodyRateTracking = DEFAULT_TRACKING,
    start: Optional[State] = None,
) -> RunResult:
    """Fly ``controller`` along ``reference`` and score the flight against ground truth.

    The vehicle starts on the reference unless ``start`` is given. With a forest and a camera, a
    depth frame is rendered at the camera rate and reused by the controller until the next capture.
    Divergence, a ground-truth collision, a controller exception or missing the goal mark the run
    failed; none of them raise. A failing controller leaves a NaN command on its last log row.
    """
    settings = settings or SimSettings()
    params = params or VehicleParams()
    state = start if start is not None else reference_state(flat_reference(reference, 0.0, params)[0])
    steps = int(round((reference.duration + settings.extra_time) / settings.dt))
    sensing = forest is not None and camera is not None
    capture_period = 1.0 / settings.camera_rate

    diagnostics: List[IterationDiagnostics] = []
    chained = controller.diagnostics_sink if isinstance(controller, GmppiController) else None

    def sink(record: IterationDiagnostics) -> None:
        diagnostics.append(record)
        if chained is not None:
            chained(record)

    t_log = np.empty(steps)
    states = np.empty((steps, STATE_SIZE))
    commands = np.empty((steps, COMMAND_SIZE))
    ref_positions = np.empty((steps, 3))
    ref_headings = np.empty(steps)
    clearances = np.full(steps, np.inf)
    failure: Optional[str] = None
    frame: Optional[DepthFrame] = None
    next_capture = 0.0
    rows = 0

    logger.info("Starting %s run on %s reference (%d steps)", controller.name, reference.kind, steps)
    if isinstance(controller, GmppiController):
        controller.diagnostics_sink = sink
    try:
        for i in range(steps):
            t = i * settings.dt
            if sensing and t >= next_capture - 1e-9:
                frame = render_depth(state.pose(), camera, forest, settings.sensor_range, settings.render_ground)
                next_capture += capture_period
                logger.debug("Captured depth frame at t=%.3f", t)

            ref, _ = flat_reference(reference, t, params)
            t_log[i] = t
            states[i] = state.to_array()
            ref_positions[i] = ref.p_ref
            ref_headings[i] = _heading_angle(ref.h_ref)
            if forest is not None:
                clearances[i] = clearance(state.pose(), params, forest)
            rows = i + 1

            try:
                command = controller.compute(state, t, frame)
            except Exception as exc:  # noqa: BLE001
                logger.exception("%s controller raised at t=%.3f", controller.name, t)
                commands[i] = np.nan
                failure = f"controller error ({type(exc).__name__}: {exc}) at t={t:.2f}s"
                break
            commands[i] = command.to_array()

            if forest is not None and clearances[i] <= 0.0:
                failure = f"collision at t={t:.2f}s"
                if settings.stop_on_collision:
                    break

            state = rk4_step(state, command, settings.dt, params, tracking)
            ref_next, _ = flat_reference(reference, t + settings.dt, params)
            if not state.is_finite():
                failure = f"diverged (non-finite state) at t={t:.2f}s"
                break
            if float(norm3(state.p - ref_next.p_ref)) > settings.divergence_distance:
                failure = f"diverged ({settings.divergence_distance:.0f} m off reference) at t={t:.2f}s"
                break
    finally:
        if isinstance(controller, GmppiController):
            controller.diagnostics_sink = chained

    goal = np.asarray(reference.end_position(), dtype=np.float64)
    log = RunLog(
        t=t_log[:rows],
        states=states[:rows],
        commands=commands[:rows],
        ref_positions=ref_positions[:rows],
        ref_headings=ref_headings[:rows],
        clearances=clearances[:rows],
        failure=failure,
        goal=goal,
    )
    if log.failure is None and len(log) and float(norm3(log.states[-1, P] - goal)) > settings.goal_tolerance:
        log.failure = f"final position more than {settings.goal_tolerance:.1f} m from the reference end"

    metrics = compute_metrics(log)
    if metrics.success:
        logger.info("Finished %s run: %s", controller.name, metrics.summary())
    else:
        logger.warning("%s run failed: %s (%s)", controller.name, metrics.failure, metrics.summary())
    return RunResult(metrics=metrics, log=log, diagnostics=diagnostics)


SweepJob = Callable[[], RunResult]


@dataclass(eq=False)
class SweepOutcome:
    key: Tuple[Hashable, ...]
    result: Optional[RunResult]
    error: Optional[str] = None


def run_sweep(jobs: Dict[Tuple[Hashable, ...], SweepJob], workers: int = 1) -> List[SweepOutcome]:
    """Run independent flights on a worker pool; outcomes come back sorted by key.

    An exception inside a job is logged and reported in its outcome instead of stopping the sweep.
    """
    outcomes: List[SweepOutcome] = []
    logger.info("Running %d flights using %d workers", len(jobs), workers)
    with ThreadPoolExecutor(max_workers=max(workers, 1), thread_name_prefix="sweep") as executor:
        future_to_key = {executor.submit(job): key for key, job in jobs.items()}
        for future in as_completed(future_to_key):
            key = future_to_key[future]
            try:
                outcomes.append(SweepOutcome(key, future.result()))
                logger.debug("Completed flight %s", key)
            except Exception as exc:  # noqa: BLE001
                logger.error("Flight %s raised %s: %s", key, type(exc).__name__, exc)
                outcomes.append(SweepOutcome(key, None, f"{type(exc).__name__}: {exc}"))
    outcomes.sort(key=lambda outcome: outcome.key)
    logger.info(
        "Finished %d/%d flights without errors", len([o for o in outcomes if o.error is None]), len(jobs)
    )
    return outcomes


def success_rate_by(outcomes: Sequence[SweepOutcome], position: int = 0) -> Dict[Hashable, float]:
    """Fraction of successful flights grouped by one component of the sweep key."""
    groups: Dict[Hashable, List[bool]] = {}
    for outcome in outcomes:
        if outcome.result is None:
            continue
        groups.setdefault(outcome.key[position], []).append(outcome.result.metrics.success)
    return {key: float(np.mean(values)) for key, values in sorted(groups.items())}
