"""Point clouds, voxel downsampling and PCD / PLY files."""
from __future__ import annotations

# std
from dataclasses import dataclass
from enum import Enum
import io
import os
from typing import Optional, Sequence

# external
import chevron
import numpy as np

# module
from ._constants import _AnyPath, PCD, PLY
from ._logging import logger
from .errors import ErrorKind, LoopGraphError
from .geometry import Pose, transform_points


class CloudFormat(str, Enum):
    """Point cloud file formats."""

    pcd_binary = "pcd-binary"
    pcd_ascii = "pcd-ascii"
    ply = "ply"

    @classmethod
    def from_path(cls: type[CloudFormat], path: _AnyPath) -> CloudFormat:
        """Guess the format from a file extension."""
        ext = os.path.splitext(os.fspath(path))[1].lower()
        if ext == PCD:
            return cls.pcd_binary
        elif ext == PLY:
            return cls.ply
        else:
            raise LoopGraphError(
                ErrorKind.UnsupportedFieldLayout,
                f"unknown point cloud extension '{ext}' for {os.fspath(path)}",
            )


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An unordered set of 3D points, optionally with intensity.

    Rows with a non-finite coordinate (or intensity) are dropped when the
    cloud is built and counted in `dropped`.
    """

    points: np.ndarray
    """(N, 3) coordinates in meters."""

    intensity: Optional[np.ndarray] = None
    """(N,) intensities, or None."""

    dropped: int = 0
    """Number of non-finite rows removed at construction."""

    def __post_init__(self: PointCloud) -> None:
        """Check shapes, drop non-finite rows and freeze."""
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        keep = np.all(np.isfinite(pts), axis=1)
        inten = None
        if self.intensity is not None:
            inten = np.array(self.intensity, dtype=float).reshape(-1)
            if len(inten) != len(pts):
                raise LoopGraphError(
                    ErrorKind.ShapeMismatch,
                    f"{len(pts)} points but {len(inten)} intensities",
                )
            keep &= np.isfinite(inten)

        removed = int(len(pts) - np.count_nonzero(keep))
        if removed:
            pts = pts[keep]
            if inten is not None:
                inten = inten[keep]

        pts.setflags(write=False)
        if inten is not None:
            inten.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "dropped", self.dropped + removed)

    def __len__(self: PointCloud) -> int:
        """Number of points."""
        return len(self.points)

    @classmethod
    def empty(cls: type[PointCloud]) -> PointCloud:
        """A cloud with no points."""
        return cls(np.zeros((0, 3)))


def voxel_downsample(c: PointCloud, leaf: float) -> PointCloud:
    """Replace the points of each occupied voxel by their centroid.

    Voxels are indexed by floor(coordinate / leaf) and the output is sorted by
    ascending voxel index, so the result does not depend on input order.

    Args:
        c: The cloud.
        leaf: Voxel side, in meters.

    Returns:
        The downsampled cloud, with averaged intensities.

    Raises:
        LoopGraphError: InvalidLeaf if leaf <= 0.

    """
    if not leaf > 0:
        raise LoopGraphError(ErrorKind.InvalidLeaf, f"leaf must be > 0, got {leaf}")

    if len(c) == 0:
        return PointCloud(np.zeros((0, 3)), None if c.intensity is None else [])

    keys = np.floor(c.points / leaf).astype(np.int64)
    _, inverse, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)

    centroids = np.stack(
        [np.bincount(inverse, weights=c.points[:, k]) for k in range(3)], axis=1
    )
    centroids /= counts[:, None]
    inten = None
    if c.intensity is not None:
        inten = np.bincount(inverse, weights=c.intensity) / counts
    return PointCloud(centroids, inten)


def transform_cloud(p: Pose, c: PointCloud) -> PointCloud:
    """Map every point by a pose; intensities are kept."""
    return PointCloud(transform_points(p, c.points), c.intensity)


def concatenate(clouds: Sequence[PointCloud]) -> PointCloud:
    """Union of clouds; intensity is kept only if every cloud has it."""
    if len(clouds) == 0:
        return PointCloud.empty()
    pts = np.concatenate([c.points for c in clouds], axis=0)
    if all(c.intensity is not None for c in clouds):
        inten: Optional[np.ndarray] = np.concatenate(
            [c.intensity for c in clouds]  # type:ignore
        )
    else:
        inten = None
    return PointCloud(pts, inten)


def flatten_z(c: PointCloud) -> PointCloud:
    """Set every z coordinate to 0."""
    pts = np.array(c.points)
    pts[:, 2] = 0.0
    return PointCloud(pts, c.intensity)


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------
_PCD_HEADER = """\
# .PCD v0.7 - Point Cloud Data file format
VERSION 0.7
FIELDS {{fields}}
SIZE {{sizes}}
TYPE {{types}}
COUNT {{counts}}
WIDTH {{n}}
HEIGHT 1
VIEWPOINT 0 0 0 1 0 0 0
POINTS {{n}}
DATA {{data}}
"""

_PLY_HEADER = """\
ply
format ascii 1.0
element vertex {{n}}
{{#fields}}
property float {{.}}
{{/fields}}
end_header
"""

_XYZ = ["x", "y", "z"]
_XYZI = ["x", "y", "z", "intensity"]


def _columns(c: PointCloud) -> tuple[list[str], np.ndarray]:
    if c.intensity is None:
        return _XYZ, c.points
    return _XYZI, np.column_stack([c.points, c.intensity])


def encode_cloud(c: PointCloud, fmt: CloudFormat) -> bytes:
    """Serialize a cloud to bytes.

    Binary PCD stores little-endian doubles so that a round trip is
    bit-exact.
    """
    fields, values = _columns(c)
    n = len(values)
    if fmt == CloudFormat.ply:
        header = chevron.render(_PLY_HEADER, dict(n=n, fields=fields))
        body = io.StringIO()
        np.savetxt(body, values, fmt="%.17g")
        return (header + body.getvalue()).encode()

    header = chevron.render(
        _PCD_HEADER,
        dict(
            fields=" ".join(fields),
            sizes=" ".join(["8"] * len(fields)),
            types=" ".join(["F"] * len(fields)),
            counts=" ".join(["1"] * len(fields)),
            n=n,
            data="binary" if fmt == CloudFormat.pcd_binary else "ascii",
        ),
    )
    if fmt == CloudFormat.pcd_binary:
        return header.encode() + values.astype("<f8").tobytes()
    else:
        body = io.StringIO()
        np.savetxt(body, values, fmt="%.17g")
        return (header + body.getvalue()).encode()


def write_cloud(
    path: _AnyPath, c: PointCloud, fmt: Optional[CloudFormat] = None
) -> None:
    """Write a cloud to a file.

    Args:
        path: Destination; its parent directory must exist.
        c: The cloud.
        fmt: File format, guessed from the extension if None.

    Raises:
        LoopGraphError: IoError if the file cannot be written.

    """
    if fmt is None:
        fmt = CloudFormat.from_path(path)
    data = encode_cloud(c, fmt)
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")


def _check_fields(fields: list[str], where: str) -> None:
    if fields != _XYZ and fields != _XYZI:
        raise LoopGraphError(
            ErrorKind.UnsupportedFieldLayout,
            f"{where}: fields {' '.join(fields)} (expected x y z [intensity])",
        )


def _ascii_rows(
    lines: list[str], first_line: int, nfields: int, where: str
) -> np.ndarray:
    rows = []
    for k, line in enumerate(lines):
        tokens = line.split()
        if len(tokens) == 0:
            continue
        if len(tokens) != nfields:
            raise LoopGraphError(
                ErrorKind.ParseError,
                f"{where}:{first_line + k}: expected {nfields} values,"
                + f" got {len(tokens)}",
            )
        try:
            rows += [[float(tok) for tok in tokens]]
        except ValueError as e:
            raise LoopGraphError(
                ErrorKind.ParseError, f"{where}:{first_line + k}: {e}"
            )
    return np.array(rows, dtype=float).reshape(-1, nfields)


def _to_cloud(values: np.ndarray, fields: list[str]) -> PointCloud:
    if len(fields) == 4:
        return PointCloud(values[:, :3], values[:, 3])
    return PointCloud(values[:, :3])


def _decode_pcd(data: bytes, where: str) -> PointCloud:  # noqa:C901
    header: dict[str, tuple[int, list[str]]] = {}
    offset = 0
    lineno = 0
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            raise LoopGraphError(
                ErrorKind.ParseError, f"{where}: header ends before a DATA line"
            )
        lineno += 1
        line = data[offset:end].decode("ascii", errors="replace").strip()
        offset = end + 1
        if len(line) == 0 or line.startswith("#"):
            continue
        key, *values = line.split()
        header[key.upper()] = (lineno, values)
        if key.upper() == "DATA":
            break

    for key in ["FIELDS", "SIZE", "TYPE"]:
        if key not in header:
            raise LoopGraphError(
                ErrorKind.ParseError,
                f"{where}: missing {key} header line"
                + f" (DATA found on line {header['DATA'][0]})",
            )

    fields = [f.lower() for f in header["FIELDS"][1]]
    _check_fields(fields, f"{where}:{header['FIELDS'][0]}")
    sizes = header["SIZE"][1]
    types = header["TYPE"][1]
    counts = header.get("COUNT", (0, ["1"] * len(fields)))[1]
    if (
        len(sizes) != len(fields)
        or len(types) != len(fields)
        or len(counts) != len(fields)
    ):
        raise LoopGraphError(
            ErrorKind.ParseError,
            f"{where}: SIZE/TYPE/COUNT lengths do not match FIELDS",
        )
    if any(t != "F" for t in types) or any(cnt != "1" for cnt in counts):
        raise LoopGraphError(
            ErrorKind.UnsupportedFieldLayout,
            f"{where}: only single float fields are supported",
        )
    if any(s not in ("4", "8") for s in sizes):
        raise LoopGraphError(
            ErrorKind.UnsupportedFieldLayout,
            f"{where}: float sizes must be 4 or 8, got {' '.join(sizes)}",
        )

    try:
        if "POINTS" in header:
            npoints = int(header["POINTS"][1][0])
        else:
            npoints = int(header["WIDTH"][1][0]) * int(header["HEIGHT"][1][0])
    except (KeyError, IndexError, ValueError):
        raise LoopGraphError(
            ErrorKind.ParseError, f"{where}: missing or bad POINTS line"
        )

    mode = header["DATA"][1][0].lower() if header["DATA"][1] else ""
    if mode == "ascii":
        lines = data[offset:].decode("ascii", errors="replace").splitlines()
        values = _ascii_rows(lines, lineno + 1, len(fields), where)
        if len(values) != npoints:
            raise LoopGraphError(
                ErrorKind.ParseError,
                f"{where}: POINTS {npoints} but {len(values)} data rows",
            )
    elif mode == "binary":
        dtype = np.dtype([(f, f"<f{s}") for f, s in zip(fields, sizes)])
        nbytes = dtype.itemsize * npoints
        if len(data) - offset < nbytes:
            raise LoopGraphError(
                ErrorKind.ParseError,
                f"{where}: byte offset {offset}: expected {nbytes} bytes of"
                + f" binary data, got {len(data) - offset}",
            )
        raw = np.frombuffer(data, dtype=dtype, count=npoints, offset=offset)
        values = np.stack([raw[f].astype(float) for f in fields], axis=1)
    else:
        raise LoopGraphError(
            ErrorKind.UnsupportedFieldLayout,
            f"{where}:{header['DATA'][0]}: DATA '{mode}' is not supported",
        )

    return _to_cloud(values.reshape(-1, len(fields)), fields)


def _decode_ply(data: bytes, where: str) -> PointCloud:
    lines = data.decode("ascii", errors="replace").splitlines()
    if len(lines) == 0 or lines[0].strip() != "ply":
        raise LoopGraphError(ErrorKind.ParseError, f"{where}:1: not a PLY file")

    npoints: Optional[int] = None
    fields: list[str] = []
    for k, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if len(tokens) == 0 or tokens[0] == "comment":
            continue
        if tokens[0] == "format" and tokens[1:2] != ["ascii"]:
            raise LoopGraphError(
                ErrorKind.UnsupportedFieldLayout,
                f"{where}:{k}: only ascii PLY is supported",
            )
        elif tokens[0] == "element":
            if tokens[1:2] != ["vertex"] or len(tokens) != 3:
                raise LoopGraphError(
                    ErrorKind.UnsupportedFieldLayout,
                    f"{where}:{k}: only vertex elements are supported",
                )
            try:
                npoints = int(tokens[2])
            except ValueError:
                npoints = -1
            if npoints < 0:
                raise LoopGraphError(
                    ErrorKind.ParseError,
                    f"{where}:{k}: bad vertex count '{tokens[2]}'",
                )
        elif tokens[0] == "property":
            fields += [tokens[-1].lower()]
        elif tokens[0] == "end_header":
            if npoints is None:
                raise LoopGraphError(
                    ErrorKind.ParseError, f"{where}:{k}: no element vertex line"
                )
            _check_fields(fields, where)
            body = lines[k : k + npoints]
            values = _ascii_rows(body, k + 1, len(fields), where)
            if len(values) != npoints:
                raise LoopGraphError(
                    ErrorKind.ParseError,
                    f"{where}: {npoints} vertices declared, {len(values)} read",
                )
            return _to_cloud(values, fields)

    raise LoopGraphError(ErrorKind.ParseError, f"{where}: no end_header line")


def decode_cloud(
    data: bytes, fmt: CloudFormat, where: str = "<bytes>"
) -> PointCloud:
    """Parse a serialized cloud; see `read_cloud()`."""
    if fmt == CloudFormat.ply:
        c = _decode_ply(data, where)
    else:
        c = _decode_pcd(data, where)
    if c.dropped:
        logger.warning(f"{where}: dropped {c.dropped} non-finite points")
    return c


def read_cloud(path: _AnyPath) -> PointCloud:
    """Read a PCD (ascii or binary) or ascii PLY file.

    Args:
        path: The file, whose extension selects the parser.

    Returns:
        The cloud; rows with NaN or Inf values are dropped and counted in
        `PointCloud.dropped`.

    Raises:
        LoopGraphError: ParseError with the offending line or byte offset,
            UnsupportedFieldLayout for fields other than x y z [intensity],
            IoError if the file cannot be read.

    """
    fmt = CloudFormat.from_path(path)
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")
    return decode_cloud(data, fmt, os.fspath(path))
