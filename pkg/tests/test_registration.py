"""Test of submaps, ICP and loop constraint measurement."""
# external
import numpy as np
import pytest

# loopgraph
from loopgraph.errors import ErrorKind, LoopGraphError
from loopgraph.geometry import (
    between,
    compose,
    identity,
    Pose,
    rotation_angle,
    rotz,
    so3_exp,
    trans,
    transform_points,
)
from loopgraph.pointcloud import PointCloud, transform_cloud, voxel_downsample
from loopgraph.registration import (
    best_fit_transform,
    build_submap,
    icp,
    IcpParams,
    measure_loop_constraint,
    SubmapParams,
    transform_error,
)
from loopgraph.scancontext import (
    descriptor_distance,
    DescriptorParams,
    LoopCandidate,
    make_descriptor,
)
from loopgraph.simulator import LidarModel, render_scan, Scene


def test_best_fit_transform(cloud: PointCloud) -> None:
    """Test the closed-form fit on exact correspondences."""
    t = compose(trans(1.0, -2.0, 0.3), rotz(0.8))
    found = best_fit_transform(cloud.points, transform_points(t, cloud.points))
    assert transform_error(found, t) == (pytest.approx(0, abs=1e-9),) * 2


def test_icp_identity(cloud: PointCloud) -> None:
    """Test ICP of a cloud against itself."""
    result = icp(cloud, cloud, identity())
    assert np.allclose(result.transform.matrix(), np.eye(4))
    assert result.fitness == 1.0
    assert result.inlier_rmse == pytest.approx(0.0, abs=1e-12)
    assert result.converged


def test_icp_recovers_transform(cloud: PointCloud) -> None:
    """Test that ICP recovers a known small motion."""
    t = Pose(rotz(0.1).rotation, np.array([0.5, 0.2, 0.0]))
    target = transform_cloud(t, cloud)
    result = icp(cloud, target, identity())
    dt, dr = transform_error(result.transform, t)
    assert dt < 1e-6
    assert dr < 1e-6
    assert result.fitness == 1.0
    assert result.rmse_history[-1] <= result.rmse_history[0]


def random_motion(rng: np.random.Generator) -> Pose:
    """Up to 0.2 rad about a random axis and up to 1 m in a random direction."""
    axis = rng.normal(0.0, 1.0, 3)
    direction = rng.normal(0.0, 1.0, 3)
    return Pose(
        so3_exp(axis / np.linalg.norm(axis) * rng.uniform(0.0, 0.2)),
        direction / np.linalg.norm(direction) * rng.uniform(0.0, 1.0),
    )


@pytest.mark.parametrize("sigma", [0.0, 0.01])
def test_icp_recovery_trials(sigma: float) -> None:
    """Test ICP on 50 random motions of 200-point clouds."""
    # every point keeps a correspondence, so the rmse cannot grow
    params = IcpParams(max_corr_dist=100.0, max_iterations=200)
    for trial in range(50):
        rng = np.random.default_rng(trial)
        source = PointCloud(rng.uniform(-10.0, 10.0, (200, 3)))
        t = random_motion(rng)
        noise = rng.normal(0.0, sigma, (200, 3))
        target = PointCloud(transform_points(t, source.points) + noise)

        result = icp(source, target, identity(), params)
        dt, dr = transform_error(result.transform, t)
        if sigma == 0.0:
            assert dt < 1e-6 and dr < 1e-6
        else:
            assert dt < 0.01 and dr < 0.005
        history = result.rmse_history
        assert all(b <= a + 1e-12 for a, b in zip(history[:-1], history[1:]))


def test_icp_residual_bound(cloud: PointCloud) -> None:
    """Test that the reported rmse matches the final correspondences."""
    rng = np.random.default_rng(5)
    noisy = PointCloud(cloud.points + rng.normal(0.0, 0.02, cloud.points.shape))
    result = icp(noisy, cloud, identity())
    moved = transform_points(result.transform, noisy.points)
    residual = np.linalg.norm(moved - cloud.points, axis=1)
    assert np.mean(residual) <= result.inlier_rmse + 1e-9


def test_icp_errors(cloud: PointCloud) -> None:
    """Test ICP failures."""
    with pytest.raises(LoopGraphError) as e:
        icp(PointCloud.empty(), cloud)
    assert e.value.kind == ErrorKind.EmptyCloud

    far = transform_cloud(trans(100.0, 0.0, 0.0), cloud)
    with pytest.raises(LoopGraphError) as e:
        icp(cloud, far, identity(), IcpParams(max_corr_dist=1.0))
    assert e.value.kind == ErrorKind.NoCorrespondences


def test_icp_params() -> None:
    """Test that ICP settings must be positive."""
    with pytest.raises(LoopGraphError) as e:
        IcpParams(max_corr_dist=0.0)
    assert e.value.kind == ErrorKind.InvalidParameter
    with pytest.raises(LoopGraphError):
        SubmapParams(half_width=-1)


def test_build_submap() -> None:
    """Test submap assembly in the world frame."""
    scans = [PointCloud(np.array([[1.0, 0.0, 0.0]])) for _ in range(3)]
    poses = [
        identity(),
        trans(10.0, 0.0, 0.0),
        compose(trans(0.0, 20.0, 0.0), rotz(np.pi / 2)),
    ]

    one = build_submap(scans, poses, 1, 0, 0.01)
    assert np.allclose(one.points, [[11.0, 0.0, 0.0]])

    everything = build_submap(scans, poses, 1, 100, 0.01)
    assert len(everything) == 3
    expected = np.array([[1.0, 0.0, 0.0], [11.0, 0.0, 0.0], [0.0, 21.0, 0.0]])
    for p in expected:
        assert np.min(np.linalg.norm(everything.points - p, axis=1)) < 1e-9

    with pytest.raises(LoopGraphError) as e:
        build_submap(scans, poses, 3, 1, 0.1)
    assert e.value.kind == ErrorKind.UnknownId


def keyframes(scene: Scene, lidar: LidarModel) -> tuple[list[PointCloud], list[Pose]]:
    """Downsampled scans of the first 20 poses of a scene."""
    poses = scene.trajectory[:20]
    scans = [voxel_downsample(render_scan(scene.world, p, lidar), 0.25) for p in poses]
    return scans, poses


def candidate(query: PointCloud, matched: PointCloud, j: int) -> LoopCandidate:
    """Revisit candidate from the descriptors of two scans."""
    p = DescriptorParams()
    dist, shift = descriptor_distance(
        make_descriptor(matched, p), make_descriptor(query, p)
    )
    return LoopCandidate(j, shift, dist)


def test_measure_revisit(scene: Scene) -> None:
    """Test a loop measurement on a simulated revisit without drift."""
    lidar = LidarModel(azimuth_steps=180)
    scans, poses = keyframes(scene, lidar)
    query_pose = compose(poses[5], compose(trans(0.4, 0.3, 0.0), rotz(0.3)))
    query = voxel_downsample(render_scan(scene.world, query_pose, lidar), 0.25)

    found = measure_loop_constraint(
        query,
        20,
        scans,
        poses,
        candidate(query, scans[5], 5),
        query_pose,
        IcpParams(),
        DescriptorParams(),
    )
    assert found is not None
    assert (found.j, found.k) == (5, 20)
    assert found.fitness >= 0.5
    dt, dr = transform_error(found.measurement, between(poses[5], query_pose))
    assert dt < 0.05
    assert dr < 0.01


def test_measure_large_drift(scene: Scene) -> None:
    """Test that a revisit is measured when the estimate is far off."""
    lidar = LidarModel(azimuth_steps=180)
    scans, poses = keyframes(scene, lidar)
    query_pose = poses[8]
    query = scans[8]
    drifted = compose(trans(6.0, -4.0, 2.0), compose(query_pose, rotz(0.2)))

    found = measure_loop_constraint(
        query,
        40,
        scans,
        poses,
        candidate(query, scans[8], 8),
        drifted,
        IcpParams(),
        DescriptorParams(),
    )
    assert found is not None
    dt, dr = transform_error(found.measurement, identity())
    assert dt < 0.05
    assert dr < 0.01


def test_measure_rejected(scene: Scene) -> None:
    """Test that a poor overlap is rejected."""
    lidar = LidarModel(azimuth_steps=180)
    scans, poses = keyframes(scene, lidar)
    sky = PointCloud(np.random.default_rng(0).uniform(-50, 50, (3 * len(scans[3]), 3)))
    sky = transform_cloud(trans(0.0, 0.0, 500.0), sky)
    query = PointCloud(np.concatenate([scans[3].points, sky.points]))

    found = measure_loop_constraint(
        query,
        40,
        scans,
        poses,
        LoopCandidate(3, 0, 0.1),
        poses[3],
        IcpParams(),
        DescriptorParams(),
    )
    assert found is None


def test_shift_matches_yaw(scene: Scene) -> None:
    """Test that the seeded yaw matches the descriptor shift."""
    p = DescriptorParams()
    lidar = LidarModel(azimuth_steps=180)
    scan = render_scan(scene.world, scene.trajectory[10], lidar)
    yawed = render_scan(scene.world, compose(scene.trajectory[10], rotz(0.5)), lidar)
    _, shift = descriptor_distance(make_descriptor(scan, p), make_descriptor(yawed, p))
    seeded = rotation_angle(rotz(-shift * p.sector_angle))
    assert abs(seeded - 0.5) <= 1.5 * p.sector_angle
