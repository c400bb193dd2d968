"""g2o text files for pose graphs."""
from __future__ import annotations

# std
import os
from typing import Optional, TextIO

# external
import numpy as np

# module
from ._constants import _AnyPath
from ._logging import logger
from .errors import ErrorKind, LoopGraphError
from .geometry import Pose
from .posegraph import Factor, FactorKind, Kernel, PoseGraph

VERTEX = "VERTEX_SE3:QUAT"
EDGE = "EDGE_SE3:QUAT"
PRIOR = "EDGE_SE3_PRIOR"

_UPPER = np.triu_indices(6)


def _fmt(values: np.ndarray) -> str:
    return " ".join("%.17g" % v for v in values)


def _pose_fields(p: Pose) -> str:
    return _fmt(np.concatenate([p.translation, p.quaternion()]))


def _write(f: TextIO, graph: PoseGraph) -> None:
    for idx, p in enumerate(graph.poses):
        f.write(f"{VERTEX} {idx} {_pose_fields(p)}\n")
    for fac in graph.factors:
        info = _fmt(fac.information[_UPPER])
        if fac.kind == FactorKind.prior:
            f.write(f"{PRIOR} {fac.i} {_pose_fields(fac.measurement)} {info}\n")
        else:
            f.write(
                f"{EDGE} {fac.i} {fac.j} {_pose_fields(fac.measurement)} {info}\n"
            )


def write_g2o(path: _AnyPath, graph: PoseGraph) -> None:
    """Export a pose graph.

    Information matrices are written in the graph's tangent ordering
    (tx, ty, tz, rx, ry, rz), upper triangle, row-major.
    """
    try:
        with open(path, "w") as f:
            _write(f, graph)
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")
    logger.info(
        f"wrote {len(graph.poses)} vertices and {len(graph.factors)} edges"
        + f" to {os.fspath(path)}"
    )


def _covariance(values: list[float]) -> np.ndarray:
    info = np.zeros((6, 6))
    info[_UPPER] = values
    info = info + np.triu(info, 1).T
    cov = np.linalg.inv(info)
    out: np.ndarray = (cov + cov.T) / 2
    return out


def read_g2o(path: _AnyPath, loop_kernel: Optional[Kernel] = None) -> PoseGraph:
    """Import a pose graph.

    Edges between consecutive vertices become odometry factors, all others
    loop factors with `loop_kernel`. Vertex ids must run from 0 without gaps.

    Raises:
        LoopGraphError: ParseError with the line number of a bad line,
            UnknownIndex or InvalidPair for bad edges.

    """
    if loop_kernel is None:
        loop_kernel = Kernel()
    try:
        with open(path, "r") as f:
            lines = f.readlines()
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")

    vertices: dict[int, Pose] = {}
    edges: list[tuple[int, Optional[int], Pose, np.ndarray]] = []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if len(tokens) == 0 or tokens[0].startswith("#"):
            continue
        where = f"{os.fspath(path)}:{lineno}"
        try:
            if tokens[0] == VERTEX and len(tokens) == 9:
                vals = [float(t) for t in tokens[2:]]
                vertices[int(tokens[1])] = Pose.from_quaternion(vals[:3], vals[3:])
            elif tokens[0] == EDGE and len(tokens) == 31:
                vals = [float(t) for t in tokens[3:]]
                edges += [
                    (
                        int(tokens[1]),
                        int(tokens[2]),
                        Pose.from_quaternion(vals[:3], vals[3:7]),
                        _covariance(vals[7:]),
                    )
                ]
            elif tokens[0] == PRIOR and len(tokens) == 30:
                vals = [float(t) for t in tokens[2:]]
                edges += [
                    (
                        int(tokens[1]),
                        None,
                        Pose.from_quaternion(vals[:3], vals[3:7]),
                        _covariance(vals[7:]),
                    )
                ]
            else:
                raise LoopGraphError(
                    ErrorKind.ParseError,
                    f"{where}: unsupported record '{tokens[0]}'"
                    + f" with {len(tokens)} tokens",
                )
        except (ValueError, np.linalg.LinAlgError) as e:
            raise LoopGraphError(ErrorKind.ParseError, f"{where}: {e}")

    if sorted(vertices) != list(range(len(vertices))):
        raise LoopGraphError(
            ErrorKind.ParseError, f"{os.fspath(path)}: vertex ids are not 0..n-1"
        )

    graph = PoseGraph()
    for idx in range(len(vertices)):
        graph.add_pose(vertices[idx])
    for i, j, z, cov in edges:
        if j is None:
            graph.add_prior(i, z, cov)
        elif j == i + 1:
            graph.add_factor(Factor(FactorKind.odometry, i, j, z, cov))
        else:
            graph.add_loop_factor(i, j, z, cov, loop_kernel)

    logger.info(
        f"read {len(graph.poses)} vertices and {len(graph.factors)} edges"
        + f" from {os.fspath(path)}"
    )
    return graph
