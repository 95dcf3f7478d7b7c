"""Command-line interface for the GMPPI flight experiments."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click

from .artifacts import ArtifactStore, dump_depth_frame
from .bench import run_benchmark
from .config import Config, ConfigError, ScenarioConfig, load_scenario
from .rendering import render_depth
from .se3_controller import flat_reference, reference_state
from .simulator import RunResult, SweepJob, SweepOutcome, make_controller, run_closed_loop, run_sweep, success_rate_by

logger = logging.getLogger(__name__)


def _parse_numbers(text: str, cast: type) -> List[Any]:
    """Parse ``"3,5,7"`` or an inclusive range ``"0..9"``."""
    values: List[Any] = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            values.extend(range(int(lo), int(hi) + 1))
        else:
            values.append(cast(part))
    if not values:
        raise click.BadParameter(f"no values in {text!r}")
    return [cast(v) for v in values]


def _load(ctx: click.Context, extra: Sequence[str] = ()) -> ScenarioConfig:
    opts = ctx.obj
    overrides = list(opts["overrides"])
    if opts["seed"] is not None:
        overrides.append(f"seeds=[{opts['seed']}]")
    overrides.extend(extra)
    try:
        return load_scenario(opts["config"], overrides)
    except ConfigError as exc:
        raise click.UsageError(f"invalid configuration:\n{exc}") from exc


def _store(ctx: click.Context, config: ScenarioConfig, command: str) -> ArtifactStore:
    root = ctx.obj["out"] or config.output or Config.OUT_DIR
    return ArtifactStore(Path(root) / command, config.model_dump(mode="json"))


def _finish(store: ArtifactStore, outcomes: Sequence[SweepOutcome]) -> None:
    if store.save_errors(outcomes) is not None:
        ctx = click.get_current_context()
        ctx.exit(1)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--seed", type=int, default=None, help="Run a single seed instead of the configured list.")
@click.option("--threads", type=int, default=None, help="Worker threads (defaults to GMPPI_THREADS).")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None, help="Results directory.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config value by dotted path.")
@click.pass_context
def main(
    ctx: click.Context,
    config_path: Optional[Path],
    seed: Optional[int],
    threads: Optional[int],
    out: Optional[Path],
    overrides: Tuple[str, ...],
) -> None:
    ctx.ensure_object(dict)
    ctx.obj.update(
        config=config_path,
        seed=seed,
        threads=max(1, threads if threads is not None else Config.THREADS),
        out=out,
        overrides=overrides,
    )


@main.command()
@click.option("--traj", default=None, help="Reference trajectory kind (hover, line, figure8, hypotrochoid).")
@click.option("--controller", default=None, help="gmppi, se3 or an ablation variant name.")
@click.option("--ablate", default=None, help="Comma-separated ablation variants to run alongside.")
@click.pass_context
def track(ctx: click.Context, traj: Optional[str], controller: Optional[str], ablate: Optional[str]) -> None:
    """Fly a reference trajectory without obstacles and record tracking metrics."""
    extra = []
    if traj is not None:
        extra.append(f"trajectory.kind={traj}")
    if controller is not None:
        extra.append(f"controller.name={controller}")
    if ablate:
        names = [name.strip() for name in ablate.split(",") if name.strip()]
        extra.append(f"controller.ablate=[{','.join(names)}]")
    config = _load(ctx, extra)
    try:
        reference = config.build_reference()
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc
    store = _store(ctx, config, "track")
    cfg = config.build_gmppi()
    sim = config.build_sim()
    speed = round(reference.peak_speed(), 6)
    threads = ctx.obj["threads"]

    jobs: Dict[Tuple[Any, ...], SweepJob] = {}
    names = config.controller_names()
    inner = threads if len(names) * len(config.seeds) == 1 else 1

    def job(name: str, seed: int) -> SweepJob:
        def run() -> RunResult:
            flier = make_controller(name, cfg, reference, seed=seed, threads=inner)
            try:
                result = run_closed_loop(flier, reference, None, None, sim, cfg.vehicle, cfg.tracking)
            finally:
                flier.close()
            store.save_run(
                result, reference.kind, name, seed, seed=seed, with_diagnostics=config.sim.write_diagnostics
            )
            return result

        return run

    for name in names:
        for seed in config.seeds:
            jobs[(name, seed, speed)] = job(name, seed)

    outcomes = run_sweep(jobs, workers=1 if inner > 1 else threads)
    for outcome in outcomes:
        if outcome.result is not None:
            click.echo(f"{outcome.key[0]} seed={outcome.key[1]}: {outcome.result.metrics.summary()}")
    store.save_aggregate("aggregate.csv", outcomes, with_controller=True)
    _finish(store, outcomes)


@main.command()
@click.option("--speeds", default=None, help="Comma list or a..b range of line speeds in m/s.")
@click.option("--seeds", default=None, help="Comma list or a..b range of forest seeds.")
@click.pass_context
def forest(ctx: click.Context, speeds: Optional[str], seeds: Optional[str]) -> None:
    """Fly straight lines through random forests over a grid of speeds and seeds."""
    extra = []
    if speeds is not None:
        extra.append(f"speeds=[{','.join(str(v) for v in _parse_numbers(speeds, float))}]")
    if seeds is not None:
        extra.append(f"seeds=[{','.join(str(v) for v in _parse_numbers(seeds, int))}]")
    config = _load(ctx, extra)
    store = _store(ctx, config, "forest")
    cfg = config.build_gmppi()
    sim = config.build_sim()
    threads = ctx.obj["threads"]
    name = config.controller.name

    forests = {seed: config.build_forest(seed) for seed in config.seeds}
    for seed, trees in forests.items():
        store.save_forest(trees, seed)

    def job(seed: int, speed: float) -> SweepJob:
        def run() -> RunResult:
            trees = forests[seed]
            reference = config.build_line(speed)
            camera = config.build_camera(speed)
            flier = make_controller(name, cfg, reference, seed=seed)
            try:
                result = run_closed_loop(flier, reference, trees, camera, sim, cfg.vehicle, cfg.tracking)
            finally:
                flier.close()
            store.save_run(
                result, "forest", name, speed, seed, seed=seed, with_diagnostics=config.sim.write_diagnostics
            )
            return result

        return run

    jobs = {(seed, speed): job(seed, speed) for speed in config.speeds for seed in config.seeds}
    outcomes = run_sweep(jobs, workers=threads)
    store.save_aggregate("aggregate.csv", outcomes)
    rates = success_rate_by(outcomes, position=1)
    summary = {"controller": name, "success_rate": {str(k): v for k, v in rates.items()}}
    store.save_summary("success_by_speed.json", summary)
    for speed, rate in rates.items():
        click.echo(f"speed={speed:g} m/s success={rate:.2f}")
    _finish(store, outcomes)


@main.command()
@click.pass_context
def bench(ctx: click.Context) -> None:
    """Time controller iterations across thread counts."""
    config = _load(ctx)
    store = _store(ctx, config, "bench")
    settings = config.bench
    seed = config.seeds[0]
    cfg = config.build_gmppi()
    reference = config.build_line(settings.speed)
    report = run_benchmark(
        cfg,
        reference,
        config.build_forest(seed),
        config.build_camera(settings.speed),
        iterations=settings.iterations,
        threads=settings.threads,
        t=min(1.0, 0.5 * reference.duration),
        seed=seed,
        target_ms=settings.target_ms,
    )
    path = store.save_summary("bench.json", report.to_record())
    for timing in report.timings:
        total = timing.phases["total"]
        click.echo(
            f"threads={timing.threads} median={total.median_ms:.2f}ms p95={total.p95_ms:.2f}ms "
            f"rollouts/s={timing.rollouts_per_second:.0f}"
        )
    if not report.deterministic:
        raise click.ClickException(f"controller outputs differ between thread counts; see {path}")


@main.command("render-debug")
@click.option("--speed", type=float, default=5.0, show_default=True, help="Line speed, selects the camera tilt.")
@click.option("--time", "t", type=float, default=0.0, show_default=True, help="Reference time of the capture.")
@click.pass_context
def render_debug(ctx: click.Context, speed: float, t: float) -> None:
    """Dump one rendered depth frame as PFM with a JSON sidecar."""
    config = _load(ctx)
    store = _store(ctx, config, "render_debug")
    seed = config.seeds[0]
    cfg = config.build_gmppi()
    reference = config.build_line(speed)
    point, _ = flat_reference(reference, t, cfg.vehicle)
    frame = render_depth(
        reference_state(point).pose(),
        config.build_camera(speed),
        config.build_forest(seed),
        config.camera.range,
        config.sim.render_ground,
    )
    path = store.root / f"depth_seed{seed}.pfm"
    dump_depth_frame(path, frame)
    logger.info("No-return fraction %.3f", frame.no_return_fraction())
    click.echo(str(path))
