#!/usr/bin/env python
"""Cli utilities."""
from __future__ import annotations

# std
from contextlib import contextmanager
import os
from typing import Any, Callable, Iterator, Optional

# external
import click

# module
from . import __version__
from ._constants import CONFIG, GRAPH
from ._g2o import write_g2o
from ._logging import logger, set_level
from .config import load, PipelineConfig
from .errors import INPUT_ERRORS, LoopGraphError
from .pipeline import assemble_map, read_trajectory, run_slam, save_outputs
from .simulator import (
    canonical_scene,
    DriftModel,
    evaluate_ate,
    LidarModel,
    render_scans,
    simulate_odometry,
    write_dataset,
)


@contextmanager
def _failures() -> Iterator[None]:
    """Turn loopgraph errors into exit codes: 2 for bad input, 1 otherwise."""
    try:
        yield
    except LoopGraphError as e:
        logger.error(str(e))
        raise SystemExit(2 if e.kind in INPUT_ERRORS else 1)


# This is the main loopgraph command
@click.group()
@click.version_option(__version__)
@click.option(
    "--log",
    type=click.Path(writable=True),
    nargs=1,
    default=None,
    help="Sink output to file.",
)
@click.option("--verbose", "-v", is_flag=True, help="Log debug messages.")
@click.option("--quiet", "-q", is_flag=True, help="Only log warnings and errors.")
def main(log: Optional[str], verbose: bool, quiet: bool) -> None:
    """Command-line tools for loopgraph.

    Results go to stdout, logs to stderr. Every command is deterministic:
    identical inputs and options give identical outputs.
    """
    if verbose:
        set_level("DEBUG")
    elif quiet:
        set_level("WARNING")
    if log is not None:
        logger.add(log)


def _pipeline_options(f: Callable[..., Any]) -> Callable[..., Any]:
    """Flags shared by commands that run the back-end."""
    options = [
        click.option(
            "--odom",
            type=click.Path(exists=True, dir_okay=False),
            required=True,
            help="Odometry poses, KITTI or TUM.",
        ),
        click.option(
            "--scans",
            type=click.Path(exists=True, file_okay=False),
            required=True,
            help="Directory of scans, one per pose.",
        ),
        click.option(
            "--config",
            "config_file",
            type=click.Path(exists=True, dir_okay=False),
            default=None,
            help="key = value config file (default: $LOOPGRAPH_CONFIG).",
        ),
        click.option("--planar", is_flag=True, help="Treat scans as 2D (z = 0)."),
        click.option("--no-loops", is_flag=True, help="Disable loop closing."),
        click.option(
            "--seed",
            type=int,
            default=None,
            help="Recorded in the config; runs draw no random numbers.",
        ),
        click.option(
            "--workers",
            type=int,
            default=None,
            help="Threads reading scans ahead (needs deterministic = false).",
        ),
        click.option(
            "--set",
            "settings",
            multiple=True,
            metavar="KEY=VALUE",
            help="Override one config value.",
        ),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _configure(
    config_file: Optional[str],
    odom: str,
    scans: str,
    planar: bool,
    no_loops: bool,
    seed: Optional[int],
    workers: Optional[int],
    settings: tuple[str, ...],
) -> PipelineConfig:
    """Layer defaults, config file and flags."""
    values: dict[str, Any] = {}
    for item in settings:
        key, eq, value = item.partition("=")
        if not eq:
            raise click.BadParameter(
                f"expected KEY=VALUE, got {item}", param_hint="--set"
            )
        values[key.strip()] = value.strip()

    values.update(odom=odom, scans=scans)
    if planar:
        values["planar_mode"] = True
    if no_loops:
        values["enable_loops"] = False
    if seed is not None:
        values["seed"] = seed
    if workers is not None:
        values["workers"] = workers
    return load(config_file).with_overrides(values)


@main.command()
@_pipeline_options
@click.option(
    "--out",
    type=click.Path(file_okay=False, writable=True),
    required=True,
    help="Output directory.",
)
def run(
    odom: str,
    scans: str,
    config_file: Optional[str],
    planar: bool,
    no_loops: bool,
    seed: Optional[int],
    workers: Optional[int],
    settings: tuple[str, ...],
    out: str,
) -> None:
    """Run SLAM on a front-end's odometry and scans.

    The back-end draws no random numbers: the same inputs and config always
    write the same outputs, whatever `--seed` or `--out` are.
    """
    with _failures():
        cfg = _configure(
            config_file, odom, scans, planar, no_loops, seed, workers, settings
        )
        result = run_slam(cfg)
        save_outputs(result, out)
        cfg.save(os.path.join(out, CONFIG))

    click.echo(f"loops: {len(result.loops)}")
    click.echo(f"initial cost: {result.initial_cost:.6g}")
    click.echo(f"final cost: {result.final_cost:.6g}")
    click.echo(f"output: {out}")
    logger.success("done")


@main.command(name="export-g2o")
@_pipeline_options
@click.option(
    "--out",
    type=click.Path(dir_okay=False, writable=True),
    default=GRAPH,
    show_default=True,
    help="g2o file to write.",
)
def export_g2o(
    odom: str,
    scans: str,
    config_file: Optional[str],
    planar: bool,
    no_loops: bool,
    seed: Optional[int],
    workers: Optional[int],
    settings: tuple[str, ...],
    out: str,
) -> None:
    """Run SLAM and dump the final pose graph as g2o."""
    with _failures():
        cfg = _configure(
            config_file, odom, scans, planar, no_loops, seed, workers, settings
        )
        result = run_slam(cfg)
        write_g2o(out, result.graph)

    click.echo(f"vertices: {len(result.graph.poses)}")
    click.echo(f"edges: {len(result.graph.factors)}")
    click.echo(f"output: {out}")
    logger.success("done")


@main.command(name="map")
@click.option(
    "--poses",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="KITTI poses, e.g. optimized_poses.txt.",
)
@click.option(
    "--scans",
    type=click.Path(exists=True, file_okay=False),
    required=True,
    help="Directory of scans, one per pose.",
)
@click.option(
    "--config",
    "config_file",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="key = value config file (default: $LOOPGRAPH_CONFIG).",
)
@click.option(
    "--leaf", type=float, default=None, help="Voxel leaf (m) [default: map_leaf]."
)
@click.option(
    "--out",
    type=click.Path(dir_okay=False, writable=True),
    default="map.ply",
    show_default=True,
    help="Map file, .ply or .pcd.",
)
@click.option("--workers", type=int, default=1, show_default=True)
def make_map(
    poses: str,
    scans: str,
    config_file: Optional[str],
    leaf: Optional[float],
    out: str,
    workers: int,
) -> None:
    """Assemble a point cloud map from saved outputs."""
    with _failures():
        if leaf is None:
            leaf = load(config_file).map_leaf
        n = assemble_map(poses, scans, leaf, out, workers)
    click.echo(f"points: {n}")
    logger.success("done")


@main.command()
@click.option(
    "--out",
    type=click.Path(file_okay=False, writable=True),
    required=True,
    help="Dataset directory.",
)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--side", type=float, default=37.5, show_default=True, help="Loop side (m)."
)
@click.option("--boxes", type=int, default=20, show_default=True)
@click.option("--cylinders", type=int, default=30, show_default=True)
@click.option("--azimuth-steps", type=int, default=360, show_default=True)
@click.option("--range-noise", type=float, default=0.0, show_default=True)
@click.option("--translation-sigma", type=float, default=0.0, show_default=True)
@click.option("--yaw-sigma", type=float, default=0.0, show_default=True)
@click.option(
    "--yaw-bias", type=float, default=0.001, show_default=True, help="rad / step"
)
@click.option("--z-bias", type=float, default=0.03, show_default=True, help="m / step")
def simulate(
    out: str,
    seed: int,
    side: float,
    boxes: int,
    cylinders: int,
    azimuth_steps: int,
    range_noise: float,
    translation_sigma: float,
    yaw_sigma: float,
    yaw_bias: float,
    z_bias: float,
) -> None:
    """Write a simulated square-loop dataset with drifting odometry."""
    with _failures():
        lidar = LidarModel(azimuth_steps=azimuth_steps, range_noise_sigma=range_noise)
        scene = canonical_scene(seed, side, boxes, cylinders, lidar)
        drift = DriftModel(translation_sigma, yaw_sigma, yaw_bias, z_bias, seed)
        odom = simulate_odometry(scene.trajectory, drift)
        scans = render_scans(
            scene.world, scene.trajectory, lidar, seed if range_noise > 0 else None
        )
        write_dataset(out, scene.trajectory, odom, scans)

    click.echo(f"frames: {len(scans)}")
    click.echo(f"output: {out}")
    logger.success("done")


@main.command(name="eval")
@click.option(
    "--estimate",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="Estimated poses, KITTI or TUM.",
)
@click.option(
    "--gt",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="Ground-truth poses, KITTI or TUM.",
)
def evaluate(estimate: str, gt: str) -> None:
    """Absolute trajectory error of an estimate."""
    with _failures():
        est_poses, _ = read_trajectory(estimate)
        gt_poses, _ = read_trajectory(gt)
        report = evaluate_ate(est_poses, gt_poses)

    click.echo(f"ate: {report.rmse:.3f}")
    for axis, value in zip("xyz", report.rmse_xyz):
        click.echo(f"ate {axis}: {value:.3f}")
    click.echo(f"max: {report.max_error:.3f}")


if __name__ == "__main__":
    main()
