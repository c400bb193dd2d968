"""Synthetic worlds, LiDAR rendering, odometry drift and trajectory error.

Worlds are made of analytic primitives standing on the ground plane z = 0:
axis-aligned boxes for buildings and vertical cylinders for poles and trees.
Scans are rendered by casting one ray per (azimuth, elevation) pair and
keeping the nearest hit, so every returned point lies on a primitive surface
up to the range noise.
"""
from __future__ import annotations

# std
from dataclasses import dataclass, field
import os
from typing import Optional, Sequence

# external
import numpy as np

# module
from ._constants import _AnyPath, GT_POSES, ODOM_POSES, PCD, place_name, SCANS_DIR
from ._logging import logger
from .errors import ErrorKind, LoopGraphError
from .geometry import between, compose, Pose, rotz, trans, transform_points, write_poses
from .pointcloud import CloudFormat, PointCloud, write_cloud
from .registration import best_fit_transform

_TINY = 1e-12


# --------------------------------------------------------------------------
# Worlds
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned cuboid."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self: Box) -> None:
        """Check that the box is well formed and above ground."""
        lo = np.array(self.min, dtype=float).reshape(3)
        hi = np.array(self.max, dtype=float).reshape(3)
        if not np.all(lo < hi) or lo[2] < 0:
            raise LoopGraphError(
                ErrorKind.InvalidParameter, f"bad box {lo} -> {hi}"
            )
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)


@dataclass(frozen=True)
class Cylinder:
    """Vertical cylinder standing on the ground."""

    cx: float
    cy: float
    radius: float
    height: float

    def __post_init__(self: Cylinder) -> None:
        """Check sizes."""
        if not (self.radius > 0 and self.height > 0):
            raise LoopGraphError(ErrorKind.InvalidParameter, f"bad cylinder {self}")


@dataclass(frozen=True)
class World:
    """Ground plane at z = 0 plus primitives."""

    boxes: tuple[Box, ...] = ()
    cylinders: tuple[Cylinder, ...] = ()


def _distance_to_path(xy: np.ndarray, path: np.ndarray) -> float:
    if len(path) == 0:
        return np.inf
    if len(path) == 1:
        return float(np.linalg.norm(xy - path[0]))
    a, b = path[:-1], path[1:]
    ab = b - a
    l2 = np.sum(ab ** 2, axis=1)
    t = np.clip(np.sum((xy - a) * ab, axis=1) / np.where(l2 > 0, l2, 1.0), 0, 1)
    return float(np.min(np.linalg.norm(xy - (a + t[:, None] * ab), axis=1)))


def generate_world(
    seed: int,
    extent_m: float,
    n_boxes: int,
    n_cylinders: int,
    path: Optional[Sequence[Pose]] = None,
    corridor: float = 4.0,
) -> World:
    """Place random primitives.

    Args:
        seed: Seed of the placement.
        extent_m: Side of the square, centered on the origin, holding every
            primitive center.
        n_boxes: Number of boxes.
        n_cylinders: Number of cylinders.
        path: Planned trajectory; no primitive comes within `corridor`
            meters of it in the xy plane.
        corridor: Clearance around the path (m).

    Returns:
        The world; the same seed gives the same world.

    Raises:
        LoopGraphError: InvalidParameter if the primitives do not fit.

    """
    rng = np.random.default_rng(seed)
    half = extent_m / 2
    xy_path = (
        np.array([p.translation[:2] for p in path]) if path else np.zeros((0, 2))
    )
    max_attempts = 1000 * (n_boxes + n_cylinders + 1)
    attempts = 0

    def place(radius: float) -> np.ndarray:
        nonlocal attempts
        while attempts < max_attempts:
            attempts += 1
            center = rng.uniform(-half, half, 2)
            if _distance_to_path(center, xy_path) > corridor + radius:
                return center
        raise LoopGraphError(
            ErrorKind.InvalidParameter,
            f"cannot fit {n_boxes} boxes and {n_cylinders} cylinders"
            + f" in {extent_m} m around the path",
        )

    boxes = []
    for _ in range(n_boxes):
        size = rng.uniform([2.0, 2.0, 3.0], [8.0, 8.0, 15.0])
        c = place(float(np.linalg.norm(size[:2] / 2)))
        lo = np.array([c[0] - size[0] / 2, c[1] - size[1] / 2, 0.0])
        boxes += [Box(lo, lo + size)]

    cylinders = []
    for _ in range(n_cylinders):
        radius, height = rng.uniform([0.2, 3.0], [0.6, 8.0])
        c = place(float(radius))
        cylinders += [Cylinder(float(c[0]), float(c[1]), float(radius), float(height))]

    logger.debug(
        f"world of {n_boxes} boxes and {n_cylinders} cylinders from seed {seed}"
    )
    return World(tuple(boxes), tuple(cylinders))


# --------------------------------------------------------------------------
# Sensor
# --------------------------------------------------------------------------
def _default_elevations() -> tuple[float, ...]:
    return tuple(float(e) for e in np.deg2rad(np.linspace(-15.0, 15.0, 16)))


@dataclass(frozen=True)
class LidarModel:
    """Spinning multi-channel LiDAR."""

    azimuth_steps: int = 360
    elevations: tuple[float, ...] = field(default_factory=_default_elevations)
    """Channel elevations, in radians."""

    max_range: float = 80.0
    range_noise_sigma: float = 0.0

    def __post_init__(self: LidarModel) -> None:
        """Check parameter ranges."""
        if self.azimuth_steps < 8 or not self.max_range > 0:
            raise LoopGraphError(
                ErrorKind.InvalidParameter,
                "lidar needs azimuth_steps >= 8 and max_range > 0",
            )
        if len(self.elevations) == 0 or self.range_noise_sigma < 0:
            raise LoopGraphError(
                ErrorKind.InvalidParameter,
                "lidar needs elevations and range_noise_sigma >= 0",
            )

    def directions(self: LidarModel) -> np.ndarray:
        """Unit ray directions in the sensor frame, azimuth-major."""
        step = 2 * np.pi / self.azimuth_steps
        az = -np.pi + (np.arange(self.azimuth_steps) + 0.5) * step
        el = np.asarray(self.elevations, dtype=float)
        a, e = np.meshgrid(az, el, indexing="ij")
        out: np.ndarray = np.stack(
            [np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1
        ).reshape(-1, 3)
        return out


def _hit_ground(o: np.ndarray, d: np.ndarray) -> np.ndarray:
    t = np.full(len(d), np.inf)
    down = d[:, 2] < -_TINY
    if o[2] > 0:
        t[down] = -o[2] / d[down, 2]
    return t


def _hit_box(o: np.ndarray, d: np.ndarray, box: Box) -> np.ndarray:
    safe = np.where(np.abs(d) < _TINY, _TINY, d)
    t1 = (box.min - o) / safe
    t2 = (box.max - o) / safe
    near = np.max(np.minimum(t1, t2), axis=1)
    far = np.min(np.maximum(t1, t2), axis=1)
    return np.where((near <= far) & (near > 0), near, np.inf)


def _hit_cylinder(o: np.ndarray, d: np.ndarray, cyl: Cylinder) -> np.ndarray:
    t = np.full(len(d), np.inf)
    ox, oy = o[0] - cyl.cx, o[1] - cyl.cy

    # side
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2 * (d[:, 0] * ox + d[:, 1] * oy)
    c = ox ** 2 + oy ** 2 - cyl.radius ** 2
    disc = b ** 2 - 4 * a * c
    ok = (a > _TINY) & (disc >= 0)
    side = np.full(len(d), np.inf)
    side[ok] = (-b[ok] - np.sqrt(disc[ok])) / (2 * a[ok])
    with np.errstate(invalid="ignore"):
        z = o[2] + side * d[:, 2]
    t = np.where((side > 0) & (z >= 0) & (z <= cyl.height), side, t)

    # top cap
    vertical = np.abs(d[:, 2]) > _TINY
    cap = np.full(len(d), np.inf)
    cap[vertical] = (cyl.height - o[2]) / d[vertical, 2]
    with np.errstate(invalid="ignore"):
        cx = ox + cap * d[:, 0]
        cy = oy + cap * d[:, 1]
        on_cap = (cap > 0) & (cx ** 2 + cy ** 2 <= cyl.radius ** 2)
    return np.where(on_cap, np.minimum(t, cap), t)


def render_scan(
    world: World,
    sensor_pose: Pose,
    model: LidarModel,
    rng: Optional[np.random.Generator] = None,
) -> PointCloud:
    """Cast every ray of the sensor into the world.

    Args:
        world: The scene.
        sensor_pose: Sensor pose in the world.
        model: The sensor.
        rng: Source of range noise; no noise is added if None.

    Returns:
        The nearest hit of every ray within max_range, in the sensor frame,
        azimuth-major then elevation-minor. Rays without a hit are skipped.

    """
    ego = model.directions()
    d = ego @ sensor_pose.rotation.T
    o = sensor_pose.translation

    t = _hit_ground(o, d)
    for box in world.boxes:
        t = np.minimum(t, _hit_box(o, d, box))
    for cyl in world.cylinders:
        t = np.minimum(t, _hit_cylinder(o, d, cyl))

    hit = t <= model.max_range
    ranges = t[hit]
    if rng is not None and model.range_noise_sigma > 0:
        ranges = ranges + rng.normal(0.0, model.range_noise_sigma, len(ranges))
    return PointCloud(ego[hit] * ranges[:, None])


def render_scans(
    world: World,
    poses: Sequence[Pose],
    model: LidarModel,
    seed: Optional[int] = None,
) -> list[PointCloud]:
    """Render one scan per pose; noise is drawn from `seed` if given."""
    rng = None if seed is None else np.random.default_rng(seed)
    return [render_scan(world, p, model, rng) for p in poses]


# --------------------------------------------------------------------------
# Trajectories and drift
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class DriftModel:
    """Noise and bias added to every odometry step."""

    translation_sigma: float = 0.0
    """Per-axis translation noise (m)."""

    yaw_sigma: float = 0.0
    """Yaw noise (rad)."""

    yaw_bias: float = 0.0
    """Constant yaw error (rad / step)."""

    z_bias: float = 0.0
    """Constant vertical error (m / step)."""

    seed: int = 0

    def __post_init__(self: DriftModel) -> None:
        """Check that sigmas are not negative."""
        if self.translation_sigma < 0 or self.yaw_sigma < 0:
            raise LoopGraphError(
                ErrorKind.InvalidParameter, f"drift sigmas must be >= 0: {self}"
            )


def simulate_odometry(gt: Sequence[Pose], drift: DriftModel) -> list[Pose]:
    """Dead-reckon noisy relative motions of a ground-truth trajectory.

    The first pose is kept; every relative motion is perturbed on its right
    by the drift model, so errors accumulate.
    """
    rng = np.random.default_rng(drift.seed)
    if len(gt) == 0:
        return []
    out = [gt[0]]
    for a, b in zip(gt[:-1], gt[1:]):
        dt = rng.normal(0.0, drift.translation_sigma, 3)
        dyaw = rng.normal(0.0, drift.yaw_sigma) + drift.yaw_bias
        dt[2] += drift.z_bias
        noise = Pose(rotz(dyaw).rotation, dt)
        out += [compose(out[-1], compose(between(a, b), noise))]
    return out


def square_loop(
    side: float = 37.5, step: float = 1.0, overlap: float = 20.0, height: float = 1.8
) -> list[Pose]:
    """A counter-clockwise square around the origin, then `overlap` more meters.

    The trajectory starts at the (-side/2, -side/2) corner heading along +x
    and samples one pose every `step` meters, so the last `overlap` meters
    revisit the start.
    """
    if not (side > 0 and step > 0 and overlap >= 0):
        raise LoopGraphError(ErrorKind.InvalidParameter, "bad square loop size")
    h = side / 2
    corners = [(-h, -h), (h, -h), (h, h), (-h, h)]
    dirs = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
    n = int(np.floor((4 * side + overlap) / step + 1e-9)) + 1

    out = []
    for i in range(n):
        s = i * step
        edge = int(np.floor(s / side + 1e-9))
        u = s - edge * side
        c, d = corners[edge % 4], dirs[edge % 4]
        out += [
            compose(
                trans(c[0] + u * d[0], c[1] + u * d[1], height),
                rotz((edge % 4) * np.pi / 2),
            )
        ]
    return out


@dataclass(frozen=True)
class Scene:
    """A world, a ground-truth trajectory and a sensor."""

    world: World
    trajectory: list[Pose]
    lidar: LidarModel


def canonical_scene(
    seed: int = 0,
    side: float = 37.5,
    n_boxes: int = 20,
    n_cylinders: int = 30,
    lidar: Optional[LidarModel] = None,
) -> Scene:
    """Square loop of 150 m perimeter at one pose per meter among primitives."""
    if lidar is None:
        lidar = LidarModel()
    gt = square_loop(side)
    world = generate_world(seed, side + 40.0, n_boxes, n_cylinders, path=gt)
    return Scene(world, gt, lidar)


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class AteReport:
    """Absolute trajectory error after rigid alignment."""

    rmse: float
    rmse_xyz: np.ndarray
    """Per-axis RMSE."""

    max_error: float


def align_rigid(source: np.ndarray, target: np.ndarray) -> Pose:
    """Rigid transform (no scale) best mapping source points onto target."""
    return best_fit_transform(np.asarray(source), np.asarray(target))


def evaluate_ate(estimated: Sequence[Pose], ground_truth: Sequence[Pose]) -> AteReport:
    """Translation RMSE after aligning the estimate to the ground truth.

    Raises:
        LoopGraphError: CountMismatch if the lengths differ, InvalidParameter
            for fewer than 3 poses.

    """
    if len(estimated) != len(ground_truth):
        raise LoopGraphError(
            ErrorKind.CountMismatch,
            f"{len(estimated)} estimated but {len(ground_truth)} true poses",
        )
    if len(estimated) < 3:
        raise LoopGraphError(
            ErrorKind.InvalidParameter, "ate needs at least 3 poses"
        )
    est = np.array([p.translation for p in estimated])
    gt = np.array([p.translation for p in ground_truth])
    residual = transform_points(align_rigid(est, gt), est) - gt
    err = np.linalg.norm(residual, axis=1)
    return AteReport(
        float(np.sqrt(np.mean(err ** 2))),
        np.sqrt(np.mean(residual ** 2, axis=0)),
        float(np.max(err)),
    )


def write_dataset(
    out_dir: _AnyPath,
    gt: Sequence[Pose],
    odom: Sequence[Pose],
    scans: Sequence[PointCloud],
) -> None:
    """Write a dataset in the pipeline's input layout.

    `odom_poses.txt` and `gt_poses.txt` hold KITTI poses, `Scans/` one binary
    PCD per pose.
    """
    if not len(gt) == len(odom) == len(scans):
        raise LoopGraphError(
            ErrorKind.CountMismatch,
            f"{len(gt)} true poses, {len(odom)} odometry poses, {len(scans)} scans",
        )
    folder = os.path.join(out_dir, SCANS_DIR)
    try:
        os.makedirs(folder, exist_ok=True)
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{folder}: {e}")
    for name in os.listdir(folder):
        if name.endswith(PCD):
            os.remove(os.path.join(folder, name))

    write_poses(os.path.join(out_dir, GT_POSES), gt)
    write_poses(os.path.join(out_dir, ODOM_POSES), odom)
    for i, c in enumerate(scans):
        write_cloud(os.path.join(folder, place_name(i, PCD)), c, CloudFormat.pcd_binary)
    logger.success(f"wrote {len(scans)} frames to {os.fspath(out_dir)}")
