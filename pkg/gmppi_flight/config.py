"""Application configuration, logging setup and the validated scenario schema."""

from __future__ import annotations

import dataclasses
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError

from .core import CommandLimits, VehicleParams
from .dynamics import BodyRateTracking
from .forest import CLEARING_RADIUS, DEFAULT_BOUNDS, DEFAULT_DENSITY, TREE_HEIGHT, TREE_RADIUS, Forest, generate_forest
from .gmppi import VARIANTS, CostProfile, GmppiConfig, NoiseProfile, TimestepConfig
from .perception import DEFAULT_HEIGHT, DEFAULT_HFOV_DEG, DEFAULT_RANGE, DEFAULT_WIDTH, CameraModel, tilt_for_speed
from .se3_controller import Se3Gains
from .simulator import CONTROLLERS, SimSettings
from .trajectories import LineTrajectory, ReferenceTrajectory, make_reference

load_dotenv()


class Config:
    """Configuration values sourced from the environment."""

    LOG_LEVEL: str = os.getenv("GMPPI_LOG_LEVEL", "INFO").upper()
    THREADS: int = int(os.getenv("GMPPI_THREADS", "1"))
    OUT_DIR: str = os.getenv("GMPPI_OUT_DIR", "results")
    SEED: int = int(os.getenv("GMPPI_SEED", "0"))


logging.basicConfig(
    level=Config.LOG_LEVEL,
    format="%(asctime)s - %(levelname)s - %(message)s",
    handlers=[logging.StreamHandler()],
)

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised when a scenario file or an override does not fit the schema."""


def _default(cls: type, name: str) -> Any:
    """Default of a dataclass field, with arrays turned into plain tuples."""
    spec = cls.__dataclass_fields__[name]  # type: ignore[attr-defined]
    value = spec.default_factory() if spec.default is dataclasses.MISSING else spec.default
    if isinstance(value, np.ndarray):
        return tuple(float(v) for v in value)
    return value


Triple = Tuple[float, float, float]
Pair = Tuple[float, float]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class VehicleSection(_Section):
    mass: float = _default(VehicleParams, "mass")
    arm_length: float = _default(VehicleParams, "arm_length")
    torque_const: float = _default(VehicleParams, "torque_const")
    inertia_diag: Triple = _default(VehicleParams, "inertia_diag")
    length: float = _default(VehicleParams, "length")
    width: float = _default(VehicleParams, "width")
    height: float = _default(VehicleParams, "height")
    drag_diag: Triple = _default(VehicleParams, "drag_diag")
    gravity: Triple = _default(VehicleParams, "gravity")


class LimitsSection(_Section):
    thrust_min: float = _default(CommandLimits, "thrust_min")
    thrust_max: float = _default(CommandLimits, "thrust_max")
    rate_xy_max: float = _default(CommandLimits, "rate_xy_max")
    rate_z_max: float = _default(CommandLimits, "rate_z_max")


class DynamicsSection(_Section):
    rate_gain: float = _default(BodyRateTracking, "rate_gain")
    perfect_rate_tracking: bool = _default(BodyRateTracking, "perfect")


class TimestepSection(_Section):
    dt0: float = _default(TimestepConfig, "dt0")
    near_steps: int = _default(TimestepConfig, "near_steps")
    n_near: float = _default(TimestepConfig, "n_near")
    n_max: float = _default(TimestepConfig, "n_max")
    v_min: float = _default(TimestepConfig, "v_min")


class NoiseSection(_Section):
    thrust: float = _default(NoiseProfile, "thrust")
    rate_x: float = _default(NoiseProfile, "rate_x")
    rate_y: float = _default(NoiseProfile, "rate_y")
    near_scale: float = _default(NoiseProfile, "near_scale")
    end_scale: float = _default(NoiseProfile, "end_scale")
    peak_at: float = _default(NoiseProfile, "peak_at")


class CostsSection(_Section):
    position: Pair = _default(CostProfile, "position")
    velocity: Pair = _default(CostProfile, "velocity")
    orientation: Pair = _default(CostProfile, "orientation")
    rate: Pair = _default(CostProfile, "rate")
    jerk: Pair = _default(CostProfile, "jerk")
    smoothness: Pair = _default(CostProfile, "smoothness")
    obstacle: Pair = _default(CostProfile, "obstacle")
    jerk_tolerance: float = _default(CostProfile, "jerk_tolerance")


class CollisionSection(_Section):
    epsilon: float = _default(GmppiConfig, "collision_epsilon")
    assumed_depth: float = _default(GmppiConfig, "assumed_depth")


class GainsSection(_Section):
    kp_xy: float = _default(Se3Gains, "kp_xy")
    kp_z: float = _default(Se3Gains, "kp_z")
    kv_xy: float = _default(Se3Gains, "kv_xy")
    kv_z: float = _default(Se3Gains, "kv_z")
    kr_xy: float = _default(Se3Gains, "kr_xy")
    kr_z: float = _default(Se3Gains, "kr_z")
    sigma: Tuple[float, float, float, float, float, float] = _default(GmppiConfig, "gain_sigma")


class ControllerSection(_Section):
    name: str = "gmppi"
    ablate: List[str] = []
    n_rollouts: int = _default(GmppiConfig, "n_rollouts")
    n_se3: int = _default(GmppiConfig, "n_se3")
    horizon_steps: int = _default(GmppiConfig, "horizon_steps")
    temperature: float = _default(GmppiConfig, "temperature")
    yaw_gain: float = _default(GmppiConfig, "yaw_gain")
    horizon_cap: float = _default(GmppiConfig, "horizon_cap")
    max_tilt_deg: float = _default(GmppiConfig, "max_tilt_deg")
    block_size: int = _default(GmppiConfig, "block_size")
    timesteps: TimestepSection = TimestepSection()
    noise: NoiseSection = NoiseSection()
    costs: CostsSection = CostsSection()
    collision: CollisionSection = CollisionSection()
    gains: GainsSection = GainsSection()


class CameraSection(_Section):
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    hfov_deg: float = DEFAULT_HFOV_DEG
    # None picks the tilt for the flight speed from the tilt table
    tilt_deg: Optional[float] = None
    mount_translation: Triple = (0.0, 0.0, 0.0)
    range: float = DEFAULT_RANGE


class TrajectorySection(_Section):
    kind: str = "figure8"
    params: Dict[str, Any] = {}


class ForestSection(_Section):
    density: float = DEFAULT_DENSITY
    bounds: Tuple[float, float, float, float] = DEFAULT_BOUNDS
    tree_radius: float = TREE_RADIUS
    tree_height: float = TREE_HEIGHT
    clearing_radius: float = CLEARING_RADIUS
    altitude: float = 1.5
    length: float = 40.0


class SimSection(_Section):
    dt: float = _default(SimSettings, "dt")
    camera_rate: float = _default(SimSettings, "camera_rate")
    extra_time: float = _default(SimSettings, "extra_time")
    divergence_distance: float = _default(SimSettings, "divergence_distance")
    goal_tolerance: float = _default(SimSettings, "goal_tolerance")
    stop_on_collision: bool = _default(SimSettings, "stop_on_collision")
    render_ground: bool = _default(SimSettings, "render_ground")
    write_diagnostics: bool = False


class BenchSection(_Section):
    iterations: int = 1000
    threads: List[int] = [1, 2, 4, 8]
    speed: float = 5.0
    target_ms: float = 10.0


class ScenarioConfig(_Section):
    """Full scenario tree; every section rejects keys it does not know."""

    vehicle: VehicleSection = VehicleSection()
    limits: LimitsSection = LimitsSection()
    dynamics: DynamicsSection = DynamicsSection()
    controller: ControllerSection = ControllerSection()
    camera: CameraSection = CameraSection()
    trajectory: TrajectorySection = TrajectorySection()
    forest: ForestSection = ForestSection()
    sim: SimSection = SimSection()
    bench: BenchSection = BenchSection()
    seeds: List[int] = [Config.SEED]
    speeds: List[float] = [3.0, 5.0, 7.0]
    output: Optional[str] = None

    def build_vehicle(self) -> VehicleParams:
        v = self.vehicle
        return VehicleParams(
            mass=v.mass,
            arm_length=v.arm_length,
            torque_const=v.torque_const,
            inertia_diag=np.array(v.inertia_diag),
            length=v.length,
            width=v.width,
            height=v.height,
            drag_diag=np.array(v.drag_diag),
            gravity=np.array(v.gravity),
        )

    def build_limits(self) -> CommandLimits:
        return CommandLimits(**self.limits.model_dump())

    def build_tracking(self) -> BodyRateTracking:
        return BodyRateTracking(rate_gain=self.dynamics.rate_gain, perfect=self.dynamics.perfect_rate_tracking)

    def build_gmppi(self) -> GmppiConfig:
        c = self.controller
        gains = c.gains.model_dump()
        sigma = gains.pop("sigma")
        return GmppiConfig(
            n_rollouts=c.n_rollouts,
            n_se3=c.n_se3,
            horizon_steps=c.horizon_steps,
            temperature=c.temperature,
            yaw_gain=c.yaw_gain,
            base_gains=Se3Gains(**gains),
            gain_sigma=tuple(sigma),
            timesteps=TimestepConfig(**c.timesteps.model_dump()),
            noise=NoiseProfile(**c.noise.model_dump()),
            costs=CostProfile(**c.costs.model_dump()),
            horizon_cap=c.horizon_cap,
            sensor_range=self.camera.range,
            max_tilt_deg=c.max_tilt_deg,
            collision_epsilon=c.collision.epsilon,
            assumed_depth=c.collision.assumed_depth,
            block_size=c.block_size,
            vehicle=self.build_vehicle(),
            limits=self.build_limits(),
            tracking=self.build_tracking(),
        )

    def build_camera(self, speed: Optional[float] = None) -> CameraModel:
        cam = self.camera
        if cam.tilt_deg is not None:
            tilt = cam.tilt_deg
        elif speed is not None:
            tilt = tilt_for_speed(speed)
        else:
            tilt = 0.0
        return CameraModel.from_fov(cam.width, cam.height, cam.hfov_deg, tilt, cam.mount_translation)

    def build_reference(self) -> ReferenceTrajectory:
        try:
            return make_reference(self.trajectory.kind, self.trajectory.params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid trajectory section: {exc}") from exc

    def build_line(self, speed: float) -> LineTrajectory:
        x_min, _, _, _ = self.forest.bounds
        return LineTrajectory(
            start=(x_min, 0.0, self.forest.altitude), direction=(1.0, 0.0, 0.0), length=self.forest.length, speed=speed
        )

    def build_forest(self, seed: int) -> Forest:
        f = self.forest
        x_min = f.bounds[0]
        clearings = (((x_min, 0.0), f.clearing_radius), ((x_min + f.length, 0.0), f.clearing_radius))
        return generate_forest(f.density, f.bounds, seed, f.tree_radius, f.tree_height, clearings)

    def build_sim(self) -> SimSettings:
        s = self.sim.model_dump()
        s.pop("write_diagnostics")
        return SimSettings(sensor_range=self.camera.range, **s)

    def controller_names(self) -> List[str]:
        """The configured controller followed by any requested ablation variants."""
        return [self.controller.name, *(n for n in self.controller.ablate if n != self.controller.name)]


def _check_names(config: ScenarioConfig) -> None:
    for name in config.controller_names():
        if name not in CONTROLLERS:
            raise ConfigError(f"unknown controller {name!r}; expected one of {list(CONTROLLERS)}")
    for name in config.controller.ablate:
        if name not in VARIANTS:
            raise ConfigError(f"unknown ablation {name!r}; expected one of {sorted(VARIANTS)}")


def _schema_node(model: type[BaseModel], path: Sequence[str]) -> bool:
    """Whether a dotted path names a field of the schema; free-form mappings accept any subkey."""
    node: Any = model
    for key in path:
        if not (isinstance(node, type) and issubclass(node, BaseModel)):
            return False
        if key not in node.model_fields:
            return False
        annotation = node.model_fields[key].annotation
        if getattr(annotation, "__origin__", None) is dict:
            return True
        node = annotation
    return True


def apply_override(data: Dict[str, Any], assignment: str) -> None:
    """Set ``a.b.c=value`` in ``data``; the value is parsed as YAML so numbers and lists keep their type."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    path = [part for part in key.strip().split(".") if part]
    if not path or not _schema_node(ScenarioConfig, path):
        raise ConfigError(f"override {key!r} does not name a configuration field")
    node = data
    for part in path[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[path[-1]] = yaml.safe_load(raw)


def load_scenario(path: Optional[Path] = None, overrides: Sequence[str] = ()) -> ScenarioConfig:
    """Read a YAML scenario (or the defaults), apply dotted overrides and validate the result."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"scenario file {path} must hold a mapping at the top level")
        data = loaded or {}
    for assignment in overrides:
        apply_override(data, assignment)
    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    _check_names(config)
    logger.debug("Loaded scenario from %s with %d overrides", path or "defaults", len(overrides))
    return config
