"""Front-end agnostic SLAM back-end.

The pipeline consumes any odometry front-end through its files: a pose per
scan (KITTI or TUM text) and a directory of scans. Keyframes are selected by
motion, chained with odometry factors and matched against earlier places; an
accepted revisit becomes a loop factor followed by a graph optimization.
Results are saved place-wise, one scan and one descriptor per keyframe.
"""
from __future__ import annotations

# std
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, replace
import os
from typing import Deque, Iterable, Iterator, Optional, Sequence

# external
import numpy as np

# module
from ._constants import (
    _AnyPath,
    LOOPS,
    ODOM_POSES,
    OPTIMIZED_POSES,
    PCD,
    place_name,
    PLY,
    SCANS_DIR,
    SCD,
    SCDS_DIR,
)
from ._logging import logger
from ._storage import DiskStorage
from .config import PipelineConfig
from .errors import Error, ErrorKind, LoopGraphError, match, Result
from .geometry import (
    between,
    flatten,
    format_pose,
    Pose,
    read_poses,
    renormalize,
    rotation_angle,
)
from .pointcloud import (
    CloudFormat,
    concatenate,
    encode_cloud,
    flatten_z,
    PointCloud,
    read_cloud,
    transform_cloud,
    voxel_downsample,
    write_cloud,
)
from .posegraph import PoseGraph, SolveReport
from .registration import LoopConstraint, measure_loop_constraint
from .scancontext import (
    Descriptor,
    detect_loop,
    encode_descriptor,
    LoopCandidate,
    make_descriptor,
    ScanContextDatabase,
)

LOOPS_HEADER = "# j k distance fitness\n"


# --------------------------------------------------------------------------
# Records
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Frame:
    """One odometry pose and its scan, as given by the front-end."""

    index: int
    pose: Pose
    cloud: PointCloud
    stamp: Optional[float] = None


@dataclass(frozen=True)
class Keyframe:
    """A frame retained by the back-end."""

    id: int
    """Sequential keyframe index, also the pose index in the graph."""

    frame: int
    """Index of the source frame."""

    odom_pose: Pose
    scan: PointCloud
    """Downsampled scan in the sensor frame."""

    descriptor: Descriptor
    stamp: Optional[float] = None


@dataclass
class SlamResult:
    """Outputs of a run."""

    keyframes: list[Keyframe]
    poses: list[Pose]
    """Optimized pose of every keyframe."""

    loops: list[LoopConstraint]
    """Accepted loops, in keyframe order."""

    reports: list[SolveReport]
    """One report per optimization, i.e. per accepted loop."""

    graph: PoseGraph
    rejected: list[Error]
    """Loop attempts that were skipped."""

    @property
    def odom_poses(self: SlamResult) -> list[Pose]:
        """Keyframe poses before optimization."""
        return [kf.odom_pose for kf in self.keyframes]

    @property
    def initial_cost(self: SlamResult) -> float:
        """Cost of the whole graph, every loop included, at the odometry poses."""
        return self.graph.cost(self.odom_poses) if self.graph.factors else 0.0

    @property
    def final_cost(self: SlamResult) -> float:
        """Cost of the whole graph at the optimized poses."""
        return self.graph.cost() if self.graph.factors else 0.0


# --------------------------------------------------------------------------
# Ingestion
# --------------------------------------------------------------------------
def _tum_pose(values: list[float]) -> Pose:
    return Pose.from_quaternion(values[1:4], values[4:8])


def read_trajectory(path: _AnyPath) -> tuple[list[Pose], Optional[list[float]]]:
    """Read a KITTI or TUM trajectory file.

    The format is detected from the first data line: 12 numbers for KITTI
    (row-major [R|t]), 8 for TUM (`t x y z qx qy qz qw`).

    Returns:
        The poses, and the timestamps for TUM files (None for KITTI).

    Raises:
        LoopGraphError: ParseError with the line number of a line that does
            not match the detected format, IoError if the file is unreadable.

    """
    try:
        with open(path, "r") as f:
            lines = f.readlines()
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")

    data = [
        (lineno, line.split())
        for lineno, line in enumerate(lines, start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not data or len(data[0][1]) == 12:
        return read_poses(path), None

    width = len(data[0][1])
    if width != 8:
        raise LoopGraphError(
            ErrorKind.ParseError,
            f"{os.fspath(path)}:{data[0][0]}: expected 12 (KITTI) or 8 (TUM)"
            + f" numbers, got {width}",
        )

    poses = []
    stamps = []
    for lineno, tokens in data:
        where = f"{os.fspath(path)}:{lineno}"
        if len(tokens) != 8:
            raise LoopGraphError(
                ErrorKind.ParseError, f"{where}: expected 8 numbers, got {len(tokens)}"
            )
        try:
            values = [float(t) for t in tokens]
            pose = _tum_pose(values)
        except ValueError as e:
            raise LoopGraphError(ErrorKind.ParseError, f"{where}: {e}")
        stamps += [values[0]]
        poses += [Pose(renormalize(pose.rotation), pose.translation)]
    logger.debug(f"read {len(poses)} TUM poses from {os.fspath(path)}")
    return poses, stamps


def scan_files(scans_dir: _AnyPath) -> list[str]:
    """PCD and PLY files of a directory, sorted by name."""
    try:
        names = os.listdir(scans_dir)
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(scans_dir)}: {e}")
    return [
        os.path.join(scans_dir, name)
        for name in sorted(names)
        if os.path.splitext(name)[1].lower() in (PCD, PLY)
    ]


def _read_ahead(files: Sequence[str], workers: int) -> Iterator[PointCloud]:
    # bounded window of pending reads, consumed in order
    with ThreadPoolExecutor(max_workers=workers) as executor:
        pending: Deque[Future[PointCloud]] = deque()
        it = iter(files)
        for name in it:
            pending.append(executor.submit(read_cloud, name))
            if len(pending) >= 2 * workers:
                break
        while pending:
            yield pending.popleft().result()
            name = next(it, None)
            if name is not None:
                pending.append(executor.submit(read_cloud, name))


def ingest(
    odom: _AnyPath, scans_dir: _AnyPath, workers: int = 1
) -> Iterator[Frame]:
    """Stream (pose, scan) pairs from a front-end's files.

    Args:
        odom: Odometry file, KITTI or TUM.
        scans_dir: Directory of .pcd or .ply scans, one per pose, matched to
            poses by sorted file name.
        workers: Threads reading scans ahead; 1 reads them in the caller.

    Returns:
        An iterator of `Frame`, in index order.

    Raises:
        LoopGraphError: FormatMismatch if the pose and scan counts differ,
            before any scan is read.

    """
    poses, stamps = read_trajectory(odom)
    files = scan_files(scans_dir)
    if len(poses) != len(files):
        raise LoopGraphError(
            ErrorKind.FormatMismatch,
            f"{len(poses)} poses in {os.fspath(odom)}"
            + f" but {len(files)} scans in {os.fspath(scans_dir)}",
        )
    logger.info(f"ingesting {len(poses)} frames from {os.fspath(scans_dir)}")
    return _frames(poses, stamps, files, workers)


def _frames(
    poses: list[Pose],
    stamps: Optional[list[float]],
    files: list[str],
    workers: int,
) -> Iterator[Frame]:
    if workers > 1:
        clouds: Iterable[PointCloud] = _read_ahead(files, workers)
    else:
        clouds = map(read_cloud, files)
    for index, (pose, cloud) in enumerate(zip(poses, clouds)):
        stamp = stamps[index] if stamps is not None else None
        yield Frame(index, pose, cloud, stamp)


def select_keyframe(
    last_kf_pose: Optional[Pose], current_pose: Pose, cfg: PipelineConfig
) -> bool:
    """Whether the current pose starts a new keyframe.

    True for the first pose, or when the motion since the last keyframe
    reaches either gap (closed thresholds).
    """
    if last_kf_pose is None:
        return True
    d = between(last_kf_pose, current_pose)
    return bool(
        np.linalg.norm(d.translation) >= cfg.keyframe_gap_m
        or rotation_angle(d) >= cfg.keyframe_gap_rad
    )


# --------------------------------------------------------------------------
# Back-end
# --------------------------------------------------------------------------
class SlamPipeline:
    """Incremental back-end, fed one frame at a time."""

    def __init__(self: SlamPipeline, cfg: Optional[PipelineConfig] = None) -> None:
        """Create an empty back-end."""
        if cfg is None:
            cfg = PipelineConfig()
        self.cfg = cfg
        self.graph = PoseGraph()
        self.db = ScanContextDatabase(cfg.search)
        self.keyframes: list[Keyframe] = []
        self.loops: list[LoopConstraint] = []
        self.reports: list[SolveReport] = []
        self.rejected: list[Error] = []
        self._frames = 0

    def process(
        self: SlamPipeline,
        pose: Pose,
        cloud: PointCloud,
        stamp: Optional[float] = None,
    ) -> Optional[Keyframe]:
        """Consume one frame.

        Args:
            pose: Odometry pose of the frame.
            cloud: Scan in the sensor frame.
            stamp: Optional timestamp.

        Returns:
            The new keyframe, or None if the frame was not selected.

        """
        cfg = self.cfg
        index = self._frames
        self._frames += 1
        if cfg.planar_mode:
            pose = flatten(pose)

        last = self.keyframes[-1] if self.keyframes else None
        if not select_keyframe(None if last is None else last.odom_pose, pose, cfg):
            return None

        if cfg.planar_mode:
            cloud = flatten_z(cloud)
        scan = voxel_downsample(cloud, cfg.scan_leaf)
        descriptor = make_descriptor(scan, cfg.descriptor)

        kid = len(self.keyframes)
        if last is None:
            self.graph.add_pose(pose)
            self.graph.add_prior(0, pose, cfg.prior_covariance)
        else:
            self.graph.add_odometry_factor(
                kid - 1, between(last.odom_pose, pose), cfg.odom_covariance
            )

        kf = Keyframe(kid, index, pose, scan, descriptor, stamp)
        self.keyframes.append(kf)
        self.db.add_keyframe(kid, descriptor)
        logger.bind(kf=kid).debug(f"frame {index}, {len(scan)} points")

        if cfg.enable_loops:
            self._close_loop(kf)
        return kf

    def _measure(
        self: SlamPipeline, kf: Keyframe, cand: LoopCandidate
    ) -> Result[LoopConstraint]:
        cfg = self.cfg
        source = f"{cand.matched_id}-{kf.id}"
        try:
            found = measure_loop_constraint(
                kf.scan,
                kf.id,
                [k.scan for k in self.keyframes[: kf.id]],
                self.graph.poses[: kf.id],
                cand,
                self.graph.poses[kf.id],
                cfg.icp,
                cfg.descriptor,
                cfg.submap,
            )
        except LoopGraphError as e:
            return Error.from_exception(e, source)
        if found is None:
            return Error(
                ErrorKind.LoopRejected,
                source,
                f"fitness below {cfg.icp.fitness_accept}",
            )
        if cfg.planar_mode:
            found = replace(found, measurement=flatten(found.measurement))
        return found

    def _close_loop(self: SlamPipeline, kf: Keyframe) -> None:
        cand = detect_loop(self.db, kf.id)
        if cand is None:
            return
        match(
            self._measure(kf, cand),
            self._accept,
            lambda err: self._reject(kf, err),
        )

    def _accept(self: SlamPipeline, loop: LoopConstraint) -> None:
        self.graph.add_loop_factor(
            loop.j,
            loop.k,
            loop.measurement,
            self.cfg.loop_covariance,
            self.cfg.loop_kernel,
        )
        self.loops.append(loop)
        report = self.graph.optimize(self.cfg.solver)
        self.reports.append(report)
        logger.bind(kf=loop.k).info(
            f"loop {loop.j}-{loop.k} closed:"
            + f" cost {report.initial_cost:.6g} -> {report.final_cost:.6g}"
        )

    def _reject(self: SlamPipeline, kf: Keyframe, err: Error) -> None:
        log = logger.bind(kf=kf.id)
        log.warning(f"loop {err.source} skipped: {err.kind.value}")
        if err.details:
            log.debug(err.details)
        self.rejected.append(err)

    def result(self: SlamPipeline) -> SlamResult:
        """Snapshot of the current outputs."""
        return SlamResult(
            list(self.keyframes),
            list(self.graph.poses),
            list(self.loops),
            list(self.reports),
            self.graph,
            list(self.rejected),
        )


def run_slam(
    cfg: PipelineConfig, frames: Optional[Iterable[Frame]] = None
) -> SlamResult:
    """Run the back-end over a whole sequence.

    Args:
        cfg: Settings; `cfg.odom` and `cfg.scans` are read if `frames` is None.
        frames: Frames to process instead of the files.

    Returns:
        The `SlamResult`. Failed loop measurements are logged and skipped.

    Raises:
        LoopGraphError: InvalidParameter if no input is given, or any
            ingestion error.

    """
    if frames is None:
        if cfg.odom is None or cfg.scans is None:
            raise LoopGraphError(
                ErrorKind.InvalidParameter, "run_slam needs odom and scans inputs"
            )
        workers = 1 if cfg.deterministic else cfg.workers
        frames = ingest(cfg.odom, cfg.scans, workers)

    pipe = SlamPipeline(cfg)
    for frame in frames:
        pipe.process(frame.pose, frame.cloud, frame.stamp)

    result = pipe.result()
    logger.success(
        f"{len(result.keyframes)} keyframes, {len(result.loops)} loops,"
        + f" {len(result.rejected)} rejected"
    )
    return result


# --------------------------------------------------------------------------
# Outputs
# --------------------------------------------------------------------------
def format_loops(loops: Sequence[LoopConstraint]) -> str:
    """Text of loops.txt."""
    return LOOPS_HEADER + "".join(
        "%d %d %.6f %.6f\n" % (c.j, c.k, c.distance, c.fitness) for c in loops
    )


def save_outputs(result: SlamResult, out_dir: _AnyPath) -> None:
    """Write the place-wise outputs of a run.

    Scans go to `Scans/%06d.pcd` (binary), descriptors to `SCDs/%06d.scd`,
    poses to `optimized_poses.txt` and `odom_poses.txt` (KITTI) and loops to
    `loops.txt`. Files left by an earlier run are replaced.

    Raises:
        LoopGraphError: IoError if a file cannot be written.

    """
    storage = DiskStorage(out_dir)
    storage.clear()
    for kf in result.keyframes:
        storage.save(
            storage.get_key(SCANS_DIR, place_name(kf.id, PCD)),
            encode_cloud(kf.scan, CloudFormat.pcd_binary),
        )
        storage.save(
            storage.get_key(SCDS_DIR, place_name(kf.id, SCD)),
            encode_descriptor(kf.descriptor),
        )

    storage.save(
        storage.get_key(OPTIMIZED_POSES),
        "".join(format_pose(p) + "\n" for p in result.poses).encode(),
    )
    storage.save(
        storage.get_key(ODOM_POSES),
        "".join(format_pose(p) + "\n" for p in result.odom_poses).encode(),
    )
    storage.save(storage.get_key(LOOPS), format_loops(result.loops).encode())
    logger.success(f"saved {len(result.keyframes)} places to {storage.path}")


def read_loops(path: _AnyPath) -> list[tuple[int, int, float, float]]:
    """Read loops.txt back as (j, k, distance, fitness) tuples."""
    try:
        with open(path, "r") as f:
            lines = f.readlines()
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")

    out = []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if len(tokens) == 0 or tokens[0].startswith("#"):
            continue
        try:
            if len(tokens) != 4:
                raise ValueError(f"expected 4 fields, got {len(tokens)}")
            out += [
                (int(tokens[0]), int(tokens[1]), float(tokens[2]), float(tokens[3]))
            ]
        except ValueError as e:
            raise LoopGraphError(
                ErrorKind.ParseError, f"{os.fspath(path)}:{lineno}: {e}"
            )
    return out


# --------------------------------------------------------------------------
# Maps
# --------------------------------------------------------------------------
def build_map(
    poses: Sequence[Pose],
    scans: Sequence[PointCloud],
    leaf: float,
    workers: int = 1,
) -> PointCloud:
    """World-frame union of every scan, voxel-downsampled.

    Raises:
        LoopGraphError: CountMismatch if there are not as many poses as scans,
            InvalidLeaf if leaf <= 0.

    """
    if len(poses) != len(scans):
        raise LoopGraphError(
            ErrorKind.CountMismatch, f"{len(poses)} poses but {len(scans)} scans"
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(transform_cloud, poses, scans))
    else:
        parts = [transform_cloud(p, c) for p, c in zip(poses, scans)]
    return voxel_downsample(concatenate(parts), leaf)


def assemble_map(
    poses_file: _AnyPath,
    scans_dir: _AnyPath,
    leaf: float,
    out: _AnyPath,
    workers: int = 1,
) -> int:
    """Build a map from saved outputs and write it.

    Args:
        poses_file: KITTI poses, one per scan.
        scans_dir: Directory of scans, sorted by name.
        leaf: Voxel leaf of the map (m).
        out: Map file; .ply, or .pcd for binary PCD.
        workers: Threads transforming scans.

    Returns:
        The number of points in the map.

    Raises:
        LoopGraphError: CountMismatch if there are not as many poses as scans,
            InvalidLeaf if leaf <= 0, or any read / write error.

    """
    if not leaf > 0:
        raise LoopGraphError(ErrorKind.InvalidLeaf, f"leaf must be > 0, got {leaf}")
    poses = read_poses(poses_file)
    files = scan_files(scans_dir)
    if len(poses) != len(files):
        raise LoopGraphError(
            ErrorKind.CountMismatch,
            f"{len(poses)} poses in {os.fspath(poses_file)}"
            + f" but {len(files)} scans in {os.fspath(scans_dir)}",
        )
    scans = [read_cloud(name) for name in files]
    cloud = build_map(poses, scans, leaf, workers)
    write_cloud(out, cloud)
    logger.success(f"map of {len(cloud)} points written to {os.fspath(out)}")
    return len(cloud)
