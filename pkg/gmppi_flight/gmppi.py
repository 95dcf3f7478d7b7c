"""Geometric MPPI: rollout schedules, random and geometric rollouts, cost, weighting and nominal update.

One call to :func:`gmppi_iteration` is one controller period. Rollouts are simulated in fixed blocks
so that every block sees identically shaped arrays no matter how many worker threads run them;
the only reductions across rollouts (softmax and weighted average) happen once on the calling thread.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .core import (
    COMMAND_SIZE,
    P,
    Q,
    STATE_SIZE,
    V,
    W,
    Command,
    CommandLimits,
    FloatArray,
    State,
    VehicleParams,
    heading_angle_error,
    norm3,
    quat_distance,
)
from .dynamics import DEFAULT_TRACKING, BodyRateTracking, clamp_command_array, derivative_array, rk4_step_array
from .perception import DEFAULT_RANGE, CollisionBoxParams, DepthFrame, state_collision_count
from .se3_controller import (
    DEFAULT_MAX_TILT_DEG,
    N_GAINS,
    FlatReferencePoint,
    Se3Gains,
    flat_reference,
    perturb_gains_array,
    se3_command_array,
)
from .streams import draw_iteration_noise
from .trajectories import ReferenceTrajectory

logger = logging.getLogger(__name__)

COST_TERMS: Tuple[str, ...] = ("position", "velocity", "orientation", "rate", "jerk", "smoothness", "obstacle")
NOISE_INPUTS = 3
SE3_WARP = 32
ROLLOUT_BLOCK = 128
RESAMPLE_TOL = 1e-9


class InvalidStateError(ValueError):
    """Raised when the state estimate handed to the controller is not finite."""


class EmptyReferenceError(ValueError):
    """Raised when the reference trajectory spans no time."""


@dataclass(frozen=True)
class TimestepConfig:
    dt0: float = 0.01
    near_steps: int = 10
    n_near: float = 1.0
    n_max: float = 20.0
    v_min: float = 0.5

    def __post_init__(self) -> None:
        if self.dt0 <= 0:
            raise ValueError("dt0 must be positive")
        if self.near_steps < 0:
            raise ValueError("near_steps must be non-negative")
        if self.n_near < 1 or self.n_max < self.n_near:
            raise ValueError("multipliers need 1 <= n_near <= n_max")
        if self.v_min <= 0:
            raise ValueError("v_min must be positive")


@dataclass(frozen=True, eq=False)
class TimestepSchedule:
    """Per-step multipliers ``n_j``; step ``j`` lasts ``n_j · dt0``."""

    multipliers: FloatArray
    dt0: float
    near_steps: int
    n_near: float
    n_far: float

    @classmethod
    def uniform(cls, n_steps: int, multiplier: float = 1.0, dt0: float = 0.01) -> TimestepSchedule:
        return cls(np.full(n_steps, float(multiplier)), dt0, 0, multiplier, multiplier)

    def __len__(self) -> int:
        return len(self.multipliers)

    @property
    def dts(self) -> FloatArray:
        return self.multipliers * self.dt0

    @property
    def offsets(self) -> FloatArray:
        """Start time of every step plus the horizon end, shape ``(N + 1,)``."""
        return np.concatenate(([0.0], np.cumsum(self.dts)))

    @property
    def horizon(self) -> float:
        return float(self.offsets[-1])


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Standard deviations ``(σ_Ft, σ_ωx, σ_ωy)`` per step; the yaw rate is never perturbed."""

    sigma: FloatArray

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.sigma) < 0):
            raise ValueError("noise standard deviations must be non-negative")

    def __len__(self) -> int:
        return len(self.sigma)


@dataclass(frozen=True, eq=False)
class CostSchedule:
    """Per-step coefficients, columns ordered as :data:`COST_TERMS`."""

    coefficients: FloatArray
    jerk_tolerance: float = 1.4

    def __post_init__(self) -> None:
        if np.shape(self.coefficients)[-1] != len(COST_TERMS):
            raise ValueError(f"cost rows need {len(COST_TERMS)} coefficients")
        if np.any(np.asarray(self.coefficients) < 0) or self.jerk_tolerance < 0:
            raise ValueError("cost coefficients must be non-negative")

    def __len__(self) -> int:
        return len(self.coefficients)

    def column(self, term: str) -> FloatArray:
        return self.coefficients[:, COST_TERMS.index(term)]


@dataclass(frozen=True)
class NoiseProfile:
    """Piecewise-linear noise shape.

    The near steps get ``near_scale`` of the peak, the magnitude then rises linearly to the peak at
    ``peak_at`` (a fraction of the horizon) and falls linearly to ``end_scale`` at the last step.
    """

    thrust: float = 2.0
    rate_x: float = 2.0
    rate_y: float = 2.0
    near_scale: float = 0.25
    end_scale: float = 0.5
    peak_at: float = 0.5

    def peak(self) -> FloatArray:
        return np.array([self.thrust, self.rate_x, self.rate_y])

    def factors(self, n_steps: int, near_steps: int) -> FloatArray:
        last = n_steps - 1
        peak = min(max(near_steps, round(self.peak_at * last)), last)
        rise_from = near_steps - 1
        out = np.empty(n_steps)
        for j in range(n_steps):
            if j < near_steps:
                out[j] = self.near_scale
            elif j <= peak:
                span = peak - rise_from
                out[j] = self.near_scale + (1.0 - self.near_scale) * (j - rise_from) / span if span > 0 else 1.0
            else:
                out[j] = 1.0 + (self.end_scale - 1.0) * (j - peak) / (last - peak)
        return out

    def schedule(self, n_steps: int, near_steps: int, constant: bool = False) -> NoiseSchedule:
        factors = np.ones(n_steps) if constant else self.factors(n_steps, near_steps)
        return NoiseSchedule(sigma=factors[:, None] * self.peak())


@dataclass(frozen=True)
class CostProfile:
    """``(first step, last step)`` coefficient pairs, interpolated linearly along the rollout."""

    position: Tuple[float, float] = (20.0, 5.0)
    velocity: Tuple[float, float] = (1.0, 5.0)
    orientation: Tuple[float, float] = (10.0, 2.0)
    rate: Tuple[float, float] = (0.5, 0.1)
    jerk: Tuple[float, float] = (0.02, 0.02)
    smoothness: Tuple[float, float] = (5.0, 5.0)
    obstacle: Tuple[float, float] = (1000.0, 1000.0)
    jerk_tolerance: float = 1.4

    def schedule(self, n_steps: int, constant: bool = False) -> CostSchedule:
        ramp = np.linspace(0.0, 1.0, n_steps) if n_steps > 1 else np.zeros(1)
        columns = []
        for term in COST_TERMS:
            start, end = getattr(self, term)
            if constant:
                columns.append(np.full(n_steps, 0.5 * (start + end)))
            else:
                columns.append(start + (end - start) * ramp)
        return CostSchedule(np.stack(columns, axis=-1), self.jerk_tolerance)


@dataclass(frozen=True)
class GmppiConfig:
    """Controller parameters together with the plant model its rollouts integrate."""

    n_rollouts: int = 768
    n_se3: int = 32
    horizon_steps: int = 30
    temperature: float = 10.0
    yaw_gain: float = 2.0
    base_gains: Se3Gains = field(default_factory=Se3Gains)
    gain_sigma: Tuple[float, ...] = (1.5, 3.0, 1.0, 2.0, 1.0, 1.0)
    timesteps: TimestepConfig = field(default_factory=TimestepConfig)
    noise: NoiseProfile = field(default_factory=NoiseProfile)
    costs: CostProfile = field(default_factory=CostProfile)
    no_se3: bool = False
    const_dt: bool = False
    const_noise_cost: bool = False
    horizon_cap: float = 10.0
    sensor_range: float = DEFAULT_RANGE
    max_tilt_deg: float = DEFAULT_MAX_TILT_DEG
    collision_epsilon: float = 1.2
    assumed_depth: float = 2.0
    block_size: int = ROLLOUT_BLOCK
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    limits: CommandLimits = field(default_factory=CommandLimits)
    tracking: BodyRateTracking = DEFAULT_TRACKING

    def __post_init__(self) -> None:
        if self.n_rollouts < 1 or self.n_se3 < 0 or self.n_se3 > self.n_rollouts:
            raise ValueError(f"need 0 <= K_SE3 <= K, got K={self.n_rollouts}, K_SE3={self.n_se3}")
        if self.n_se3 % SE3_WARP:
            raise ValueError(f"K_SE3 must be a multiple of {SE3_WARP}, got {self.n_se3}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0 <= self.timesteps.near_steps < self.horizon_steps:
            raise ValueError("near_steps must be smaller than the horizon")
        if len(self.gain_sigma) != N_GAINS or min(self.gain_sigma) < 0:
            raise ValueError(f"gain_sigma needs {N_GAINS} non-negative entries")
        if self.block_size <= 0 or self.block_size % SE3_WARP:
            raise ValueError(f"block_size must be a positive multiple of {SE3_WARP}")
        if self.horizon_cap <= 0 or self.sensor_range <= 0:
            raise ValueError("horizon cap and sensor range must be positive")

    @property
    def k_se3(self) -> int:
        return 0 if self.no_se3 else self.n_se3

    @property
    def k_random(self) -> int:
        return self.n_rollouts - self.k_se3

    @property
    def box(self) -> CollisionBoxParams:
        return CollisionBoxParams.from_vehicle(self.vehicle, self.collision_epsilon, self.assumed_depth)

    def noise_schedule(self) -> NoiseSchedule:
        return self.noise.schedule(self.horizon_steps, self.timesteps.near_steps, self.const_noise_cost)

    def cost_schedule(self) -> CostSchedule:
        return self.costs.schedule(self.horizon_steps, self.const_noise_cost)

    def variant(self, name: str) -> GmppiConfig:
        try:
            flags = VARIANTS[name]
        except KeyError:
            raise ValueError(f"unknown controller variant {name!r}; expected one of {sorted(VARIANTS)}") from None
        return replace(self, **flags)


VARIANTS: Dict[str, Dict[str, bool]] = {
    "gmppi": {"no_se3": False, "const_dt": False, "const_noise_cost": False},
    "no_se3": {"no_se3": True, "const_dt": False, "const_noise_cost": False},
    "const_dt": {"no_se3": False, "const_dt": True, "const_noise_cost": False},
    "const_noise": {"no_se3": False, "const_dt": False, "const_noise_cost": True},
    "mppi": {"no_se3": True, "const_dt": True, "const_noise_cost": True},
}


@dataclass(frozen=True, eq=False)
class TimedCommands:
    """Command sequence ``(N, 4)`` laid on the step grid ``dts`` starting at ``start_time``."""

    commands: FloatArray
    dts: FloatArray
    start_time: float = 0.0

    @property
    def offsets(self) -> FloatArray:
        return np.concatenate(([0.0], np.cumsum(self.dts)))


@dataclass(frozen=True, eq=False)
class RolloutBatch:
    """Random rollouts first, geometric rollouts last."""

    commands: FloatArray
    states: FloatArray
    costs: FloatArray
    weights: FloatArray
    terms: FloatArray
    n_se3: int = 0

    def __len__(self) -> int:
        return len(self.costs)

    @property
    def collided(self) -> FloatArray:
        return self.terms[:, COST_TERMS.index("obstacle")] > 0.0


@dataclass(frozen=True)
class IterationDiagnostics:
    iteration: int
    t: float
    min_cost: float
    mean_cost: float
    max_cost: float
    term_means: Dict[str, float]
    n_far: float
    collision_fraction: float
    colliding_weight: float
    timings_ns: Dict[str, int]

    def to_record(self) -> Dict[str, object]:
        return {
            "iteration": self.iteration,
            "t": self.t,
            "min_cost": self.min_cost,
            "mean_cost": self.mean_cost,
            "max_cost": self.max_cost,
            "term_means": self.term_means,
            "n_far": self.n_far,
            "collision_fraction": self.collision_fraction,
            "colliding_weight": self.colliding_weight,
            "timings_ns": self.timings_ns,
        }


@dataclass(frozen=True, eq=False)
class IterationResult:
    command: Command
    nominal: TimedCommands
    nominal_states: FloatArray
    schedule: TimestepSchedule
    batch: RolloutBatch
    diagnostics: IterationDiagnostics

    @property
    def v_avg_nominal(self) -> float:
        return float(np.mean(norm3(self.nominal_states[:, V])))


def compute_timesteps(v_avg_nom: float, sensor_range: float, cfg: GmppiConfig) -> TimestepSchedule:
    """Stretch the far steps so the horizon covers the usable sensor range at the nominal speed."""
    if v_avg_nom < 0:
        raise ValueError(f"average speed must be non-negative, got {v_avg_nom}")
    if sensor_range <= 0:
        raise ValueError(f"sensor range must be positive, got {sensor_range}")
    ts = cfg.timesteps
    n_steps, near = cfg.horizon_steps, ts.near_steps
    reach = min(sensor_range, cfg.horizon_cap)
    speed = max(v_avg_nom, ts.v_min)
    total = reach / (speed * ts.dt0)

    if cfg.const_dt:
        n_equal = float(np.clip(total / n_steps, ts.n_near, ts.n_max))
        return TimestepSchedule(np.full(n_steps, n_equal), ts.dt0, near, n_equal, n_equal)

    n_far = float(np.clip((total - near * ts.n_near) / (n_steps - near), ts.n_near, ts.n_max))
    multipliers = np.concatenate((np.full(near, ts.n_near), np.full(n_steps - near, n_far)))
    return TimestepSchedule(multipliers, ts.dt0, near, ts.n_near, n_far)


def resample_commands(seq: TimedCommands, sched: TimestepSchedule, start_time: Optional[float] = None) -> FloatArray:
    """Zero-order-hold ``seq`` onto the steps of ``sched`` beginning at ``start_time``.

    Steps starting past the end of ``seq`` repeat its last command.
    """
    start = seq.start_time if start_time is None else start_time
    query = (start - seq.start_time) + sched.offsets[:-1]
    idx = np.searchsorted(seq.offsets[:-1], query + RESAMPLE_TOL, side="right") - 1
    idx = np.clip(idx, 0, len(seq.commands) - 1)
    return seq.commands[idx].copy()


def _yaw_rate(x: FloatArray, ref: FlatReferencePoint, cfg: GmppiConfig) -> FloatArray:
    angle, _ = heading_angle_error(x[..., Q], ref.h_ref)
    return cfg.yaw_gain * angle + ref.w_ref[..., 2]


def simulate_random_rollouts(
    x0: FloatArray,
    u_nom: FloatArray,
    sigma: FloatArray,
    normals: FloatArray,
    refs: FlatReferencePoint,
    dts: FloatArray,
    cfg: GmppiConfig,
) -> Tuple[FloatArray, FloatArray]:
    """Perturbed copies of ``u_nom`` with the yaw rate slaved to the reference heading.

    ``normals`` has shape ``(K, N, 3)``; returns commands ``(K, N, 4)`` and states ``(K, N + 1, 13)``.
    """
    n_rollouts, n_steps = normals.shape[0], len(dts)
    commands = np.empty((n_rollouts, n_steps, COMMAND_SIZE))
    states = np.empty((n_rollouts, n_steps + 1, STATE_SIZE))
    states[:, 0] = x0
    for j in range(n_steps):
        x = states[:, j]
        u = np.broadcast_to(u_nom[j], (n_rollouts, COMMAND_SIZE)).copy()
        u[:, :NOISE_INPUTS] += sigma[j] * normals[:, j]
        u[:, 3] = _yaw_rate(x, refs[j], cfg)
        u = clamp_command_array(u, cfg.limits)
        commands[:, j] = u
        states[:, j + 1] = rk4_step_array(x, u, float(dts[j]), cfg.vehicle, cfg.tracking)
    return commands, states


def simulate_se3_rollouts(
    x0: FloatArray,
    gains: FloatArray,
    refs: FlatReferencePoint,
    dts: FloatArray,
    cfg: GmppiConfig,
) -> Tuple[FloatArray, FloatArray]:
    """Closed-loop SE(3) rollouts, one gain vector per row of ``gains``."""
    n_rollouts, n_steps = gains.shape[0], len(dts)
    commands = np.empty((n_rollouts, n_steps, COMMAND_SIZE))
    states = np.empty((n_rollouts, n_steps + 1, STATE_SIZE))
    states[:, 0] = x0
    for j in range(n_steps):
        x = states[:, j]
        u = se3_command_array(x, refs[j], gains, cfg.vehicle, cfg.limits, cfg.max_tilt_deg)
        commands[:, j] = u
        states[:, j + 1] = rk4_step_array(x, u, float(dts[j]), cfg.vehicle, cfg.tracking)
    return commands, states


def generate_random_rollout(
    x0: State,
    u_nom: FloatArray,
    sched: TimestepSchedule,
    noise: NoiseSchedule,
    rng: np.random.Generator,
    refs: FlatReferencePoint,
    cfg: GmppiConfig,
) -> Tuple[FloatArray, FloatArray]:
    """A single random rollout drawing its ``(N, 3)`` normals from ``rng``."""
    normals = rng.standard_normal((len(sched), NOISE_INPUTS))
    commands, states = simulate_random_rollouts(
        x0.to_array(), u_nom, noise.sigma, normals[None], refs, sched.dts, cfg
    )
    return commands[0], states[0]


def generate_se3_rollout(
    x0: State,
    base_gains: Se3Gains,
    gain_sigma: FloatArray,
    rng: np.random.Generator,
    refs: FlatReferencePoint,
    sched: TimestepSchedule,
    cfg: GmppiConfig,
) -> Tuple[FloatArray, FloatArray]:
    gains = perturb_gains_array(base_gains, gain_sigma, rng.standard_normal(N_GAINS))
    commands, states = simulate_se3_rollouts(x0.to_array(), gains[None], refs, sched.dts, cfg)
    return commands[0], states[0]


def rollout_accelerations(states: FloatArray, dts: FloatArray, a0: FloatArray) -> Tuple[FloatArray, FloatArray]:
    """Step-average accelerations ``(..., N + 1, 3)`` and the times they are sampled at.

    Entry 0 is ``a0`` at the rollout start; entry ``i`` averages step ``i - 1`` and sits at its midpoint.
    """
    v = states[..., V]
    acc = np.empty(v.shape)
    acc[..., 0, :] = a0
    acc[..., 1:, :] = (v[..., 1:, :] - v[..., :-1, :]) / dts[:, None]
    starts = np.concatenate(([0.0], np.cumsum(dts)))[:-1]
    times = np.concatenate(([0.0], starts + 0.5 * dts))
    return acc, times


def rollout_cost_terms(
    states: FloatArray,
    refs: FlatReferencePoint,
    nominal_positions: FloatArray,
    frame: Optional[DepthFrame],
    costs: CostSchedule,
    dts: FloatArray,
    box: CollisionBoxParams,
    a0: FloatArray,
) -> FloatArray:
    """Weighted cost terms ``(..., N, 7)``; row ``j`` scores state ``j + 1`` against reference point ``j + 1``.

    ``refs`` carries the ``N + 1`` reference points of the step boundaries.
    """
    n_steps = len(dts)
    x = states[..., 1:, :]
    ref = refs[1:]
    e_p = norm3(x[..., P] - ref.p_ref)
    e_v = norm3(x[..., V] - ref.v_ref)
    e_q = quat_distance(x[..., Q], ref.q_ref)
    e_w = norm3(x[..., W] - ref.w_ref)

    acc, times = rollout_accelerations(states, dts, a0)
    jerk = (acc[..., 1:, :] - acc[..., :-1, :]) / np.diff(times)[:, None]
    e_j = np.maximum(norm3(jerk) - costs.jerk_tolerance * norm3(ref.j_ref), 0.0)

    e_s = norm3(x[..., P] - nominal_positions)

    if frame is None:
        e_obs = np.zeros(e_p.shape)
    else:
        scale = (n_steps - np.arange(n_steps)).astype(np.float64)
        e_obs = scale * state_collision_count(x[..., P], frame, box)

    errors = np.stack((e_p, e_v, e_q, e_w, e_j, e_s, e_obs), axis=-1)
    return errors * costs.coefficients


def _accumulate(terms: FloatArray) -> Tuple[FloatArray, FloatArray]:
    # fixed summation order per rollout, independent of how the batch is split
    per_term = np.zeros(terms.shape[:-2] + terms.shape[-1:])
    for j in range(terms.shape[-2]):
        per_term = per_term + terms[..., j, :]
    total = np.zeros(terms.shape[:-2])
    for c in range(terms.shape[-1]):
        total = total + per_term[..., c]
    return total, per_term


def rollout_cost(
    states: FloatArray,
    refs: FlatReferencePoint,
    nominal_positions: FloatArray,
    frame: Optional[DepthFrame],
    costs: CostSchedule,
    dts: FloatArray,
    box: CollisionBoxParams,
    a0: FloatArray,
) -> FloatArray:
    """Total cost of each rollout in ``states``."""
    terms = rollout_cost_terms(states, refs, nominal_positions, frame, costs, dts, box, a0)
    return _accumulate(terms)[0]


def weights_from_costs(costs: FloatArray, temperature: float) -> FloatArray:
    """Softmax of ``-(C - min C) / λ``; exact ties at the minimum share the weight when λ is tiny.

    A cost of ``+inf`` gets zero weight. NaN costs, ``-inf`` or no finite cost at all are errors.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    costs = np.asarray(costs, dtype=np.float64)
    if np.any(np.isnan(costs)) or np.any(costs == -np.inf):
        raise ValueError("rollout costs must be finite or +inf")
    if not np.any(np.isfinite(costs)):
        raise ValueError("no rollout has a finite cost")
    rho = np.min(costs)
    w = np.exp(-(costs - rho) / temperature)
    return w / np.sum(w)


def update_nominal(commands: FloatArray, weights: FloatArray, limits: CommandLimits) -> FloatArray:
    """Weighted average of rollout commands ``(K, N, 4)``, clamped to the command limits."""
    return clamp_command_array(np.einsum("k,kjc->jc", weights, commands), limits)


def _blocks(total: int, size: int) -> List[Tuple[int, int]]:
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


@dataclass(frozen=True, eq=False)
class _BlockOutput:
    commands: FloatArray
    states: FloatArray
    terms: FloatArray
    simulate_ns: int
    cost_ns: int


def gmppi_iteration(  # noqa: PLR0913
    state: State,
    prev_nominal: Optional[TimedCommands],
    reference: ReferenceTrajectory,
    frame: Optional[DepthFrame],
    cfg: GmppiConfig,
    iteration: int,
    *,
    t: float = 0.0,
    seed: int = 0,
    v_avg_nom: Optional[float] = None,
    prev_command: Optional[FloatArray] = None,
    executor: Optional[Executor] = None,
) -> IterationResult:
    """One controller period: schedule, resample, roll out, cost, weight and update.

    Without a previous nominal the plan starts from the reference feed-forward commands.
    ``v_avg_nom`` defaults to the current speed and ``prev_command`` (the command applied during
    the last period) seeds the first rollout acceleration; without it the reference acceleration is used.
    """
    if not state.is_finite():
        raise InvalidStateError(f"non-finite state estimate: {state}")
    if reference.duration <= 0:
        raise EmptyReferenceError(f"reference {reference.kind!r} spans no time")

    stamps: Dict[str, int] = {}
    t0 = time.perf_counter_ns()
    x0 = state.to_array()
    n_steps = cfg.horizon_steps
    speed = float(norm3(state.v)) if v_avg_nom is None else v_avg_nom
    sched = compute_timesteps(speed, frame.range_m if frame is not None else cfg.sensor_range, cfg)
    dts = sched.dts
    refs, clamped = flat_reference(reference, t + sched.offsets, cfg.vehicle)
    if np.any(clamped):
        logger.debug("Reference lookups clamped on %d of %d steps", int(np.count_nonzero(clamped)), len(clamped))
    noise_sched = cfg.noise_schedule()
    cost_sched = cfg.cost_schedule()
    stamps["schedule"] = time.perf_counter_ns() - t0

    t1 = time.perf_counter_ns()
    if prev_nominal is None:
        u_nom = clamp_command_array(refs[:n_steps].command_array(), cfg.limits)
    else:
        u_nom = resample_commands(prev_nominal, sched, start_time=t)
    if prev_command is None:
        a0 = np.asarray(refs.a_ref[0])
    else:
        a0 = derivative_array(x0, np.asarray(prev_command), cfg.vehicle, cfg.tracking)[V]
    _, nominal_states = simulate_random_rollouts(
        x0, u_nom, np.zeros((n_steps, NOISE_INPUTS)), np.zeros((1, n_steps, NOISE_INPUTS)), refs, dts, cfg
    )
    nominal_states = nominal_states[0]
    nominal_positions = nominal_states[1:, P]
    noise = draw_iteration_noise(seed, iteration, cfg.k_random, n_steps, cfg.k_se3, NOISE_INPUTS, N_GAINS)
    gains = perturb_gains_array(cfg.base_gains, np.asarray(cfg.gain_sigma), noise.gains)
    stamps["resample"] = time.perf_counter_ns() - t1

    box = cfg.box

    def run_block(kind: str, lo: int, hi: int) -> _BlockOutput:
        s0 = time.perf_counter_ns()
        if kind == "random":
            commands, states = simulate_random_rollouts(
                x0, u_nom, noise_sched.sigma, noise.command[lo:hi], refs, dts, cfg
            )
        else:
            commands, states = simulate_se3_rollouts(x0, gains[lo:hi], refs, dts, cfg)
        s1 = time.perf_counter_ns()
        terms = _accumulate(rollout_cost_terms(states, refs, nominal_positions, frame, cost_sched, dts, box, a0))[1]
        return _BlockOutput(commands, states, terms, s1 - s0, time.perf_counter_ns() - s1)

    tasks = [("random", lo, hi) for lo, hi in _blocks(cfg.k_random, cfg.block_size)]
    tasks += [("se3", lo, hi) for lo, hi in _blocks(cfg.k_se3, cfg.block_size)]

    t2 = time.perf_counter_ns()
    if executor is None:
        outputs = [run_block(*task) for task in tasks]
    else:
        outputs = list(executor.map(lambda task: run_block(*task), tasks))
    stamps["rollouts"] = time.perf_counter_ns() - t2

    t3 = time.perf_counter_ns()
    commands = np.concatenate([o.commands for o in outputs], axis=0)
    states = np.concatenate([o.states for o in outputs], axis=0)
    terms = np.concatenate([o.terms for o in outputs], axis=0)
    costs = np.zeros(len(terms))
    for c in range(terms.shape[1]):
        costs = costs + terms[:, c]
    diverged = ~(np.all(np.isfinite(states), axis=(1, 2)) & np.isfinite(costs))
    if np.any(diverged):
        logger.warning(
            "Iteration %d: %d of %d rollouts diverged", iteration, int(np.count_nonzero(diverged)), len(costs)
        )
        costs[diverged] = np.inf
        commands[diverged] = 0.0
    weights = weights_from_costs(costs, cfg.temperature)
    new_nominal = update_nominal(commands, weights, cfg.limits)
    stamps["update"] = time.perf_counter_ns() - t3
    stamps["simulate_cpu"] = sum(o.simulate_ns for o in outputs)
    stamps["cost_cpu"] = sum(o.cost_ns for o in outputs)
    stamps["total"] = time.perf_counter_ns() - t0

    batch = RolloutBatch(commands, states, costs, weights, terms, cfg.k_se3)
    collided = batch.collided
    diagnostics = IterationDiagnostics(
        iteration=iteration,
        t=float(t),
        min_cost=float(np.min(costs)),
        mean_cost=float(np.mean(costs[~diverged])),
        max_cost=float(np.max(costs)),
        term_means={name: float(np.mean(terms[~diverged, i])) for i, name in enumerate(COST_TERMS)},
        n_far=sched.n_far,
        collision_fraction=float(np.mean(collided)),
        colliding_weight=float(np.sum(weights[collided])),
        timings_ns=stamps,
    )
    logger.debug(
        "iteration %d: cost min %.3g mean %.3g, n_far %.2f, %.1f%% colliding",
        iteration,
        diagnostics.min_cost,
        diagnostics.mean_cost,
        sched.n_far,
        100 * diagnostics.collision_fraction,
    )
    return IterationResult(
        command=Command.from_array(new_nominal[0]),
        nominal=TimedCommands(new_nominal, dts, float(t)),
        nominal_states=nominal_states,
        schedule=sched,
        batch=batch,
        diagnostics=diagnostics,
    )


class GmppiController:
    """Stateful wrapper carrying the nominal plan between periods.

    Owns a thread pool when ``threads > 1``; use it as a context manager or call :meth:`close`.
    """

    name = "gmppi"

    def __init__(
        self,
        cfg: GmppiConfig,
        reference: ReferenceTrajectory,
        seed: int = 0,
        threads: int = 1,
        diagnostics_sink: Optional[Callable[[IterationDiagnostics], None]] = None,
    ) -> None:
        self.cfg = cfg
        self.reference = reference
        self.seed = seed
        self.threads = threads
        self.diagnostics_sink = diagnostics_sink
        self._executor: Optional[ThreadPoolExecutor] = (
            ThreadPoolExecutor(max_workers=threads, thread_name_prefix="rollouts") if threads > 1 else None
        )
        self.reset()

    def reset(self) -> None:
        self.iteration = 0
        self.last_result: Optional[IterationResult] = None
        self._nominal: Optional[TimedCommands] = None
        self._v_avg: Optional[float] = None
        self._last_command: Optional[FloatArray] = None
        self._overrun_warned = False

    def compute(self, state: State, t: float, frame: Optional[DepthFrame]) -> Command:
        result = gmppi_iteration(
            state,
            self._nominal,
            self.reference,
            frame,
            self.cfg,
            self.iteration,
            t=t,
            seed=self.seed,
            v_avg_nom=self._v_avg,
            prev_command=self._last_command,
            executor=self._executor,
        )
        self.iteration += 1
        self.last_result = result
        self._nominal = result.nominal
        self._v_avg = result.v_avg_nominal
        self._last_command = result.command.to_array()
        if not self._overrun_warned and t + result.schedule.horizon > self.reference.duration:
            logger.warning(
                "Rollout horizon passes the end of the %.2f s reference; holding its end point",
                self.reference.duration,
            )
            self._overrun_warned = True
        if self.diagnostics_sink is not None:
            self.diagnostics_sink(result.diagnostics)
        return result.command

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self) -> GmppiController:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
