"""Polar height descriptors and revisit detection.

A descriptor bins the points of an ego-frame scan by ring (range) and sector
(azimuth) and keeps the highest point of every bin. Yawing the sensor shifts
the sector columns circularly, so comparing two descriptors over every column
shift gives a rotation-invariant distance together with the yaw offset.
"""
from __future__ import annotations

# std
import bisect
from dataclasses import dataclass
import io
import os
import threading
from typing import Optional, Union

# external
import numpy as np
from scipy.spatial import cKDTree

# module
from ._constants import _AnyPath
from ._logging import logger
from .errors import ErrorKind, LoopGraphError
from .pointcloud import PointCloud


@dataclass(frozen=True)
class DescriptorParams:
    """Shape of the descriptor."""

    num_rings: int = 20
    num_sectors: int = 60
    max_radius: float = 80.0
    """Points at or beyond this range (m) are ignored."""

    min_height_offset: float = 2.0
    """Added to z so that ground returns encode positive heights."""

    def __post_init__(self: DescriptorParams) -> None:
        """Check parameter ranges."""
        if self.num_rings < 1 or self.num_sectors < 2 or not self.max_radius > 0:
            raise LoopGraphError(
                ErrorKind.InvalidParameter,
                "descriptor needs num_rings >= 1, num_sectors >= 2 and"
                + f" max_radius > 0, got {self}",
            )

    @property
    def sector_angle(self: DescriptorParams) -> float:
        """Azimuth width of one sector, in radians."""
        return 2 * np.pi / self.num_sectors


@dataclass(frozen=True)
class SearchParams:
    """Revisit detection settings."""

    num_candidates: int = 10
    """Number of nearest ring keys compared in full."""

    loop_threshold: float = 0.2
    """Maximum descriptor distance of an accepted candidate."""

    exclusion_window: int = 30
    """Keyframes this recent are never candidates."""

    def __post_init__(self: SearchParams) -> None:
        """Check parameter ranges."""
        if self.num_candidates < 1 or self.exclusion_window < 0:
            raise LoopGraphError(
                ErrorKind.InvalidParameter,
                f"search needs num_candidates >= 1, exclusion_window >= 0: {self}",
            )


@dataclass(frozen=True, eq=False)
class Descriptor:
    """A rings x sectors matrix of per-bin maximum heights."""

    matrix: np.ndarray
    ring_key: np.ndarray

    @classmethod
    def from_matrix(cls: type[Descriptor], m: np.ndarray) -> Descriptor:
        """Make a descriptor and its ring key from a matrix."""
        m = np.array(m, dtype=float)
        if m.ndim != 2:
            raise LoopGraphError(
                ErrorKind.ShapeMismatch, f"descriptor must be 2D, got {m.shape}"
            )
        m.setflags(write=False)
        key = ring_key(m)
        key.setflags(write=False)
        return cls(m, key)

    @property
    def shape(self: Descriptor) -> tuple[int, int]:
        """(rings, sectors)."""
        return self.matrix.shape  # type:ignore


@dataclass(frozen=True)
class LoopCandidate:
    """A previously visited keyframe matching a query."""

    matched_id: int
    shift: int
    """Column shift aligning the query to the match."""

    distance: float


def ring_key(d: Union[Descriptor, np.ndarray]) -> np.ndarray:
    """Fraction of occupied sectors in each ring."""
    m = d.matrix if isinstance(d, Descriptor) else np.asarray(d)
    out: np.ndarray = np.count_nonzero(m, axis=1) / m.shape[1]
    return out


def make_descriptor(c: PointCloud, p: DescriptorParams) -> Descriptor:
    """Encode an ego-frame scan.

    Args:
        c: The scan, in the sensor frame.
        p: Descriptor shape.

    Returns:
        The descriptor; an empty cloud gives the zero matrix.

    """
    m = np.zeros((p.num_rings, p.num_sectors))
    if len(c):
        x, y, z = c.points[:, 0], c.points[:, 1], c.points[:, 2]
        r = np.hypot(x, y)
        keep = r < p.max_radius
        ring = np.floor(p.num_rings * r[keep] / p.max_radius).astype(np.int64)
        sector = np.floor(
            p.num_sectors * (np.arctan2(y[keep], x[keep]) + np.pi) / (2 * np.pi)
        ).astype(np.int64)
        np.clip(ring, 0, p.num_rings - 1, out=ring)
        np.clip(sector, 0, p.num_sectors - 1, out=sector)
        height = np.maximum(z[keep] + p.min_height_offset, 0.0)
        np.maximum.at(m, (ring, sector), height)
    return Descriptor.from_matrix(m)


def descriptor_distance(a: Descriptor, b: Descriptor) -> tuple[float, int]:
    """Column-wise cosine distance, minimized over circular shifts.

    For each shift n, column j of `a` is compared with column j + n (mod S)
    of `b`. Pairs of empty columns are skipped; an empty column against a
    non-empty one counts as similarity 0. Two descriptors with no non-empty
    column at all are at distance 1.

    Args:
        a: First descriptor.
        b: Second descriptor.

    Returns:
        (distance, best_shift), the smallest shift winning ties.

    Raises:
        LoopGraphError: ShapeMismatch if the shapes differ.

    """
    if a.shape != b.shape:
        raise LoopGraphError(
            ErrorKind.ShapeMismatch, f"descriptor shapes {a.shape} != {b.shape}"
        )
    ma, mb = a.matrix, b.matrix
    s = ma.shape[1]
    idx = (np.arange(s)[:, None] + np.arange(s)[None, :]) % s
    shifted = mb[:, idx]  # rings x shift x column

    na = np.linalg.norm(ma, axis=0)
    nb = np.linalg.norm(shifted, axis=0)
    dots = np.einsum("rj,rnj->nj", ma, shifted)

    both = (na[None, :] > 0) & (nb > 0)
    either = (na[None, :] > 0) | (nb > 0)
    denom = na[None, :] * nb
    sim = np.divide(dots, denom, out=np.zeros_like(dots), where=both)
    count = np.count_nonzero(either, axis=1)
    mean_sim = np.divide(
        sim.sum(axis=1), count, out=np.zeros(s), where=count > 0
    )
    dist = np.where(count > 0, 1.0 - mean_sim, 1.0)

    shift = int(np.argmin(dist))
    return float(dist[shift]), shift


def encode_descriptor(d: Descriptor) -> bytes:
    """Descriptor as text, one ring per line."""
    buf = io.BytesIO()
    np.savetxt(buf, d.matrix, fmt="%.6f", delimiter=" ")
    return buf.getvalue()


def write_descriptor(path: _AnyPath, d: Descriptor) -> None:
    """Write `encode_descriptor()` to a file."""
    try:
        with open(path, "wb") as f:
            f.write(encode_descriptor(d))
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")


def read_descriptor(path: _AnyPath) -> Descriptor:
    """Read a descriptor written by `write_descriptor()`."""
    try:
        m = np.loadtxt(path, ndmin=2)
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")
    except ValueError as e:
        raise LoopGraphError(ErrorKind.ParseError, f"{os.fspath(path)}: {e}")
    return Descriptor.from_matrix(m)


class ScanContextDatabase:
    """Descriptors of past keyframes, searchable by ring key.

    Writes (`add_keyframe()`) and reads are serialized by a single lock.
    """

    def __init__(
        self: ScanContextDatabase, params: Optional[SearchParams] = None
    ) -> None:
        """Create an empty database."""
        if params is None:
            params = SearchParams()
        self.params = params
        self._ids: list[int] = []
        self._descriptors: list[Descriptor] = []
        self._keys: list[np.ndarray] = []
        self._tree: Optional[cKDTree] = None
        self._tree_size = 0
        self._lock = threading.RLock()

    def __len__(self: ScanContextDatabase) -> int:
        """Number of stored keyframes."""
        return len(self._ids)

    def add_keyframe(self: ScanContextDatabase, id: int, d: Descriptor) -> None:
        """Store the descriptor of a new keyframe.

        Raises:
            LoopGraphError: DuplicateId if `id` is not larger than every stored
                id, ShapeMismatch if the descriptor shape differs from the
                stored ones.

        """
        with self._lock:
            if self._ids and id <= self._ids[-1]:
                raise LoopGraphError(
                    ErrorKind.DuplicateId,
                    f"keyframe {id} added after keyframe {self._ids[-1]}",
                )
            if self._descriptors and d.shape != self._descriptors[0].shape:
                raise LoopGraphError(
                    ErrorKind.ShapeMismatch,
                    f"descriptor shape {d.shape} != {self._descriptors[0].shape}",
                )
            self._ids.append(id)
            self._descriptors.append(d)
            self._keys.append(d.ring_key)

    def get(self: ScanContextDatabase, id: int) -> Descriptor:
        """Return the descriptor of a keyframe."""
        with self._lock:
            return self._descriptors[self._position(id)]

    def _position(self: ScanContextDatabase, id: int) -> int:
        pos = bisect.bisect_left(self._ids, id)
        if pos == len(self._ids) or self._ids[pos] != id:
            raise LoopGraphError(ErrorKind.UnknownId, f"no keyframe {id}")
        return pos

    def _eligible(self: ScanContextDatabase, query_id: int) -> int:
        # ids are sorted, so candidates are a prefix
        return bisect.bisect_right(
            self._ids, query_id - self.params.exclusion_window
        )

    def _best(
        self: ScanContextDatabase, query: Descriptor, positions: list[int]
    ) -> Optional[LoopCandidate]:
        best: Optional[LoopCandidate] = None
        for pos in sorted(positions):
            dist, shift = descriptor_distance(self._descriptors[pos], query)
            if best is None or dist < best.distance:
                best = LoopCandidate(self._ids[pos], shift, dist)
        if best is not None and best.distance <= self.params.loop_threshold:
            return best
        return None

    def detect_loop(
        self: ScanContextDatabase, query_id: int
    ) -> Optional[LoopCandidate]:
        """Look for a past keyframe at the same place as `query_id`.

        The `num_candidates` nearest ring keys among keyframes with
        id <= query_id - exclusion_window are compared with the full shifted
        distance; the closest one is returned if its distance is within
        `loop_threshold`.

        Raises:
            LoopGraphError: UnknownId if `query_id` is not stored.

        """
        with self._lock:
            if len(self._ids) == 0:
                return None
            query = self._descriptors[self._position(query_id)]
            m = self._eligible(query_id)
            if m == 0:
                return None

            if self._tree is None or self._tree_size != m:
                self._tree = cKDTree(np.array(self._keys[:m]))
                self._tree_size = m

            k = min(self.params.num_candidates, m)
            _, found = self._tree.query(query.ring_key, k=k)
            positions = [int(i) for i in np.atleast_1d(found)]
            return self._best(query, positions)

    def linear_scan(
        self: ScanContextDatabase, query_id: int
    ) -> Optional[LoopCandidate]:
        """Exhaustive version of `detect_loop()` over every eligible keyframe."""
        with self._lock:
            if len(self._ids) == 0:
                return None
            query = self._descriptors[self._position(query_id)]
            return self._best(query, list(range(self._eligible(query_id))))


def detect_loop(db: ScanContextDatabase, query_id: int) -> Optional[LoopCandidate]:
    """See `ScanContextDatabase.detect_loop()`."""
    cand = db.detect_loop(query_id)
    if cand is not None:
        logger.debug(
            f"{query_id} matches {cand.matched_id}"
            + f" (distance {cand.distance:.3f}, shift {cand.shift})"
        )
    return cand


def add_keyframe(db: ScanContextDatabase, id: int, d: Descriptor) -> None:
    """See `ScanContextDatabase.add_keyframe()`."""
    db.add_keyframe(id, d)
