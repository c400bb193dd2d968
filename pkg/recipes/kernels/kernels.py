"""Compare loop kernels on a simulated square loop with false revisits."""
from __future__ import annotations

# std
import os
import tempfile

# loopgraph
import loopgraph
from loopgraph.simulator import (
    canonical_scene,
    DriftModel,
    evaluate_ate,
    render_scans,
    simulate_odometry,
    write_dataset,
)

KERNELS = ["none", "huber(1.0)", "cauchy(1.0)", "dcs(1.0)"]

scene = canonical_scene(seed=3)
gt = scene.trajectory
odom = simulate_odometry(gt, DriftModel(yaw_bias=0.001, z_bias=0.03, seed=3))
scans = render_scans(scene.world, gt, scene.lidar, seed=3)

with tempfile.TemporaryDirectory() as dir:
    write_dataset(dir, gt, odom, scans)
    base = loopgraph.PipelineConfig(
        keyframe_gap_m=0.5,
        odom=os.path.join(dir, "odom_poses.txt"),
        scans=os.path.join(dir, "Scans"),
    )
    # accept far-off descriptor matches, some of which are wrong
    base = base.with_overrides(
        {"search.loop_threshold": "0.35", "search.exclusion_window": "10"}
    )
    print(f"odometry ate: {evaluate_ate(odom, gt).rmse:.3f} m")

    for kernel in KERNELS:
        cfg = base.with_overrides({"loop_kernel": kernel})
        result = loopgraph.run_slam(cfg)
        ate = evaluate_ate(result.poses, gt)
        print(f"{kernel:>12}: {len(result.loops)} loops, ate {ate.rmse:.3f} m")
