"""Loop constraint measurement: submaps and point-to-point ICP."""
from __future__ import annotations

# std
from dataclasses import dataclass, field
from typing import Optional, Sequence

# external
import numpy as np
from scipy.spatial import cKDTree

# module
from ._logging import logger
from .errors import ErrorKind, LoopGraphError
from .geometry import (
    between,
    compose,
    inverse,
    Pose,
    rotation_angle,
    rotz,
    transform_points,
    yaw,
)
from .pointcloud import concatenate, PointCloud, transform_cloud, voxel_downsample
from .scancontext import DescriptorParams, LoopCandidate


@dataclass(frozen=True)
class IcpParams:
    """ICP and loop acceptance settings."""

    max_corr_dist: float = 1.0
    """Correspondences farther than this (m) are ignored."""

    max_iterations: int = 50
    translation_eps: float = 1e-6
    rotation_eps: float = 1e-6
    fitness_accept: float = 0.5
    """Minimum fraction of matched query points for a loop to be accepted."""

    coarse_factor: float = 5.0
    """Correspondence radius multiplier of the coarse pass."""

    def __post_init__(self: IcpParams) -> None:
        """Check that every parameter is positive."""
        for name in self.__dataclass_fields__:
            if not getattr(self, name) > 0:
                raise LoopGraphError(
                    ErrorKind.InvalidParameter, f"icp.{name} must be > 0"
                )


@dataclass(frozen=True)
class SubmapParams:
    """Submap around a matched keyframe."""

    half_width: int = 12
    """Keyframes on each side of the match."""

    leaf: float = 0.4
    """Voxel leaf of the assembled submap (m)."""

    def __post_init__(self: SubmapParams) -> None:
        """Check parameter ranges."""
        if self.half_width < 0 or not self.leaf > 0:
            raise LoopGraphError(
                ErrorKind.InvalidParameter,
                f"submap needs half_width >= 0 and leaf > 0, got {self}",
            )


@dataclass
class IcpResult:
    """Outcome of an ICP run."""

    transform: Pose
    """Maps source points onto the target."""

    fitness: float
    """Fraction of source points with a correspondence."""

    inlier_rmse: float
    iterations: int
    converged: bool
    """True if stopped by the eps test rather than max_iterations."""

    rmse_history: list[float] = field(default_factory=list)
    """Correspondence RMSE before each update."""


@dataclass(frozen=True)
class LoopConstraint:
    """An accepted loop measurement between keyframes j < k."""

    j: int
    k: int
    measurement: Pose
    """Relative pose from X_j to X_k."""

    distance: float
    fitness: float
    inlier_rmse: float


def build_submap(
    scans: Sequence[PointCloud],
    poses: Sequence[Pose],
    center_id: int,
    half_width: int,
    leaf: float,
) -> PointCloud:
    """World-frame union of the scans around a keyframe.

    Args:
        scans: Ego-frame scans of every keyframe.
        poses: Current estimates of every keyframe.
        center_id: The matched keyframe.
        half_width: Keyframes on each side to include, clamped to the session.
        leaf: Voxel leaf of the result.

    Returns:
        The voxel-downsampled submap, in the world frame.

    Raises:
        LoopGraphError: UnknownId if center_id is not a keyframe.

    """
    n = min(len(scans), len(poses))
    if not 0 <= center_id < n:
        raise LoopGraphError(
            ErrorKind.UnknownId, f"no keyframe {center_id} among {n}"
        )
    lo = max(0, center_id - half_width)
    hi = min(n - 1, center_id + half_width)
    parts = [transform_cloud(poses[i], scans[i]) for i in range(lo, hi + 1)]
    return voxel_downsample(concatenate(parts), leaf)


def best_fit_transform(source: np.ndarray, target: np.ndarray) -> Pose:
    """Closed-form rigid fit (no scale) of matched point sets."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    h = (source - mu_s).T @ (target - mu_t)
    u, _, vt = np.linalg.svd(h)
    d = np.ones(3)
    if np.linalg.det(vt.T @ u.T) < 0:
        d[-1] = -1.0
    r = vt.T @ np.diag(d) @ u.T
    return Pose(r, mu_t - r @ mu_s)


def _correspondences(
    tree: cKDTree, moved: np.ndarray, max_dist: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dist, idx = tree.query(moved, k=1, distance_upper_bound=max_dist)
    mask = np.isfinite(dist)
    return dist, idx, mask


def icp(
    source: PointCloud,
    target: PointCloud,
    init: Optional[Pose] = None,
    p: Optional[IcpParams] = None,
) -> IcpResult:
    """Point-to-point ICP.

    Args:
        source: Points to move.
        target: Fixed points.
        init: Initial source-to-target guess (identity if None).
        p: ICP settings.

    Returns:
        The `IcpResult`; fitness and RMSE are computed from the
        correspondences of the final transform.

    Raises:
        LoopGraphError: EmptyCloud if either cloud is empty,
            NoCorrespondences if no source point is within max_corr_dist of
            the target at the initial guess.

    """
    if p is None:
        p = IcpParams()
    if init is None:
        init = Pose(np.eye(3), np.zeros(3))
    if len(source) == 0 or len(target) == 0:
        raise LoopGraphError(
            ErrorKind.EmptyCloud,
            f"icp on {len(source)} source and {len(target)} target points",
        )

    tree = cKDTree(target.points)
    src = source.points
    tgt = target.points
    transform = init
    history: list[float] = []
    converged = False
    iterations = 0

    for it in range(p.max_iterations):
        moved = transform_points(transform, src)
        dist, idx, mask = _correspondences(tree, moved, p.max_corr_dist)
        if not mask.any():
            if it == 0:
                raise LoopGraphError(
                    ErrorKind.NoCorrespondences,
                    f"no target point within {p.max_corr_dist} m of the source",
                )
            break
        history.append(float(np.sqrt(np.mean(dist[mask] ** 2))))

        step = best_fit_transform(moved[mask], tgt[idx[mask]])
        transform = compose(step, transform)
        iterations += 1

        if (
            np.linalg.norm(step.translation) < p.translation_eps
            and rotation_angle(step) < p.rotation_eps
        ):
            converged = True
            break

    moved = transform_points(transform, src)
    dist, _, mask = _correspondences(tree, moved, p.max_corr_dist)
    matched = int(np.count_nonzero(mask))
    fitness = matched / len(src)
    rmse = float(np.sqrt(np.mean(dist[mask] ** 2))) if matched else float("inf")
    return IcpResult(transform, fitness, rmse, iterations, converged, history)


def _without_yaw(p: Pose) -> np.ndarray:
    out: np.ndarray = rotz(-yaw(p)).rotation @ p.rotation
    return out


def _coarse_to_fine(
    source: PointCloud, target: PointCloud, init: Pose, p: IcpParams
) -> IcpResult:
    coarse = IcpParams(
        max_corr_dist=p.max_corr_dist * p.coarse_factor,
        max_iterations=p.max_iterations,
        translation_eps=p.translation_eps,
        rotation_eps=p.rotation_eps,
        fitness_accept=p.fitness_accept,
        coarse_factor=p.coarse_factor,
    )
    first = icp(source, target, init, coarse)
    return icp(source, target, first.transform, p)


def measure_loop_constraint(
    query_scan: PointCloud,
    query_id: int,
    scans: Sequence[PointCloud],
    poses: Sequence[Pose],
    candidate: LoopCandidate,
    query_pose_est: Pose,
    p: IcpParams,
    sc_params: DescriptorParams,
    submap: Optional[SubmapParams] = None,
) -> Optional[LoopConstraint]:
    """Measure the relative pose between a matched keyframe and the query.

    The submap around the match is expressed in the match's frame, so the
    ICP transform is directly the relative pose from X_j to X_k. Two initial
    guesses are tried, both with the yaw given by the descriptor shift:

    - the relative pose between the current estimates of j and k,
    - zero translation, for drift larger than the ICP basin.

    Each runs a coarse ICP pass with a widened correspondence radius, then a
    fine pass. The guess with the best fine fitness wins, the first on ties.

    Args:
        query_scan: Ego-frame scan of the query keyframe k.
        query_id: k.
        scans: Ego-frame scans of the keyframes before the query.
        poses: Pose estimates of those keyframes.
        candidate: Output of the revisit detector.
        query_pose_est: Current estimate of X_k.
        p: ICP settings.
        sc_params: Descriptor settings, for the shift angle.
        submap: Submap settings.

    Returns:
        The constraint, or None if the fitness is below `fitness_accept`.

    Raises:
        LoopGraphError: UnknownId for a bad match, or the last ICP error if
            every initial guess failed.

    """
    if submap is None:
        submap = SubmapParams()
    j = candidate.matched_id
    target_world = build_submap(scans, poses, j, submap.half_width, submap.leaf)
    target = transform_cloud(inverse(poses[j]), target_world)

    seed_yaw = rotz(-candidate.shift * sc_params.sector_angle)
    guess = between(poses[j], query_pose_est)
    hypotheses = [
        Pose(seed_yaw.rotation @ _without_yaw(guess), guess.translation),
        seed_yaw,
    ]

    best: Optional[IcpResult] = None
    failure: Optional[LoopGraphError] = None
    for init in hypotheses:
        try:
            result = _coarse_to_fine(query_scan, target, init, p)
        except LoopGraphError as e:
            failure = e
            continue
        if best is None or result.fitness > best.fitness:
            best = result

    if best is None:
        assert failure is not None
        raise failure

    log = logger.bind(kf=query_id)
    if best.fitness < p.fitness_accept:
        log.debug(
            f"loop {j}-{query_id} fitness {best.fitness:.3f}"
            + f" < {p.fitness_accept}"
        )
        return None

    log.debug(
        f"loop {j}-{query_id} fitness {best.fitness:.3f},"
        + f" rmse {best.inlier_rmse:.3f}, {best.iterations} iterations"
    )
    return LoopConstraint(
        j,
        query_id,
        best.transform,
        candidate.distance,
        best.fitness,
        best.inlier_rmse,
    )


def transform_error(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation (m) and rotation (rad) difference of two poses."""
    d = between(a, b)
    return float(np.linalg.norm(d.translation)), rotation_angle(d)
