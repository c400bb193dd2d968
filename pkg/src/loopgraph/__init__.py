"""Loopgraph is a front-end agnostic LiDAR SLAM back-end 🔁.

.. include:: documentation.md
"""
# module
from . import geometry, pointcloud, posegraph, registration, scancontext, simulator
from . import types
from ._g2o import read_g2o, write_g2o
from ._logging import set_level
from .config import load, PipelineConfig
from .errors import LoopGraphError
from .pipeline import (
    assemble_map,
    build_map,
    ingest,
    run_slam,
    save_outputs,
    select_keyframe,
    SlamPipeline,
)

__all__ = [
    # pipeline
    "ingest",
    "select_keyframe",
    "run_slam",
    "save_outputs",
    "assemble_map",
    "build_map",
    "SlamPipeline",
    # configuration
    "PipelineConfig",
    "load",
    # graph files
    "read_g2o",
    "write_g2o",
    # building blocks
    "geometry",
    "pointcloud",
    "scancontext",
    "registration",
    "posegraph",
    "simulator",
    # Error handling, types and logs
    "LoopGraphError",
    "types",
    "set_level",
]


# Version information
# We grab it from setup.py so that we don't have to bump versions in multiple
# places.
# std
from importlib import metadata  # noqa:E402

__version__ = metadata.version("loopgraph")
