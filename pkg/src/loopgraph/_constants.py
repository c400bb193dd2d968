"""Names of files and directories in the place-wise output layout."""
from __future__ import annotations

# std
import hashlib
from os import PathLike
from typing import Union

# Some types
_AnyPath = Union[str, PathLike]

# Saver layout
SCANS_DIR = "Scans"
SCDS_DIR = "SCDs"
OPTIMIZED_POSES = "optimized_poses.txt"
ODOM_POSES = "odom_poses.txt"
LOOPS = "loops.txt"
CONFIG = "config.txt"
GRAPH = "graph.g2o"

# Simulated dataset layout
GT_POSES = "gt_poses.txt"

# Extensions
PCD = ".pcd"
PLY = ".ply"
SCD = ".scd"

# Environment
CONFIG_ENV = "LOOPGRAPH_CONFIG"

# Length of short digests
SHORT = 6


def place_name(index: int, ext: str) -> str:
    """Return the file name of a place-wise record."""
    return f"{index:06d}{ext}"


def short_digest(data: Union[str, bytes]) -> str:
    """Shorten the sha1 digest of some data."""
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha1(data).hexdigest()[:SHORT]
