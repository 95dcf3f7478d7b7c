"""Timing harness for controller iterations on a synthetic forest scene."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import FloatArray, State
from .forest import Forest
from .gmppi import GmppiConfig, TimedCommands, gmppi_iteration
from .perception import CameraModel, DepthFrame
from .rendering import render_depth
from .se3_controller import flat_reference, reference_state
from .trajectories import ReferenceTrajectory

logger = logging.getLogger(__name__)

PHASES = ("schedule", "resample", "rollouts", "update", "total")


@dataclass(frozen=True)
class PhaseStats:
    median_ms: float
    p95_ms: float

    @classmethod
    def from_ns(cls, samples: Sequence[int]) -> PhaseStats:
        ms = np.asarray(samples, dtype=np.float64) / 1e6
        return cls(float(np.median(ms)), float(np.percentile(ms, 95)))


@dataclass(frozen=True)
class ThreadTiming:
    threads: int
    phases: Dict[str, PhaseStats]
    rollouts_per_second: float
    commands: FloatArray = field(repr=False)

    def to_record(self) -> Dict[str, object]:
        return {
            "threads": self.threads,
            "rollouts_per_second": self.rollouts_per_second,
            "phases": {k: {"median_ms": v.median_ms, "p95_ms": v.p95_ms} for k, v in self.phases.items()},
        }


@dataclass(frozen=True)
class BenchReport:
    iterations: int
    n_rollouts: int
    timings: List[ThreadTiming]
    deterministic: bool
    target_ms: float

    @property
    def meets_target(self) -> bool:
        return all(t.phases["total"].median_ms <= self.target_ms for t in self.timings)

    def to_record(self) -> Dict[str, object]:
        return {
            "iterations": self.iterations,
            "n_rollouts": self.n_rollouts,
            "deterministic": self.deterministic,
            "target_ms": self.target_ms,
            "meets_target": self.meets_target,
            "timings": [t.to_record() for t in self.timings],
        }


def _time_sequence(
    state: State,
    reference: ReferenceTrajectory,
    frame: Optional[DepthFrame],
    cfg: GmppiConfig,
    iterations: int,
    t: float,
    seed: int,
    threads: int,
) -> ThreadTiming:
    samples: Dict[str, List[int]] = {phase: [] for phase in PHASES}
    commands = np.empty((iterations, 4))
    nominal: Optional[TimedCommands] = None
    v_avg: Optional[float] = None
    last: Optional[FloatArray] = None
    executor = ThreadPoolExecutor(max_workers=threads, thread_name_prefix="bench") if threads > 1 else None
    try:
        for i in range(iterations):
            result = gmppi_iteration(
                state,
                nominal,
                reference,
                frame,
                cfg,
                i,
                t=t,
                seed=seed,
                v_avg_nom=v_avg,
                prev_command=last,
                executor=executor,
            )
            nominal, v_avg = result.nominal, result.v_avg_nominal
            last = result.command.to_array()
            commands[i] = last
            for phase in PHASES:
                samples[phase].append(result.diagnostics.timings_ns[phase])
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    phases = {phase: PhaseStats.from_ns(values) for phase, values in samples.items()}
    total_s = phases["total"].median_ms / 1e3
    rate = cfg.n_rollouts / total_s if total_s > 0 else float("inf")
    return ThreadTiming(threads=threads, phases=phases, rollouts_per_second=rate, commands=commands)


def run_benchmark(
    cfg: GmppiConfig,
    reference: ReferenceTrajectory,
    forest: Optional[Forest],
    camera: CameraModel,
    iterations: int = 1000,
    threads: Sequence[int] = (1, 2, 4, 8),
    t: float = 1.0,
    seed: int = 0,
    target_ms: float = 10.0,
) -> BenchReport:
    """Repeat the same iteration sequence for every thread count and compare timings and outputs."""
    if iterations < 1:
        raise ValueError("benchmark needs at least one iteration")
    point, _ = flat_reference(reference, t, cfg.vehicle)
    state = reference_state(point)
    frame = render_depth(state.pose(), camera, forest, cfg.sensor_range)
    logger.info(
        "Benchmarking %d iterations of %d rollouts on thread counts %s", iterations, cfg.n_rollouts, list(threads)
    )

    timings = []
    for n in threads:
        timing = _time_sequence(state, reference, frame, cfg, iterations, t, seed, n)
        logger.info(
            "%d threads: total median %.2f ms, p95 %.2f ms, %.0f rollouts/s",
            n,
            timing.phases["total"].median_ms,
            timing.phases["total"].p95_ms,
            timing.rollouts_per_second,
        )
        timings.append(timing)

    deterministic = all(np.array_equal(timings[0].commands, other.commands) for other in timings[1:])
    if not deterministic:
        logger.error("Commands differ between thread counts")
    report = BenchReport(iterations, cfg.n_rollouts, timings, deterministic, target_ms)
    if not report.meets_target:
        logger.warning("Median iteration time exceeds the %.1f ms target", target_ms)
    return report
