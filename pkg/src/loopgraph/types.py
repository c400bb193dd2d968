"""Object types."""
# module
from .config import PipelineConfig
from .errors import Error, ErrorKind, Result
from .geometry import Pose, Twist
from .pipeline import Frame, Keyframe, SlamResult
from .pointcloud import CloudFormat, PointCloud
from .posegraph import Factor, FactorKind, Kernel, KernelKind, SolveReport, SolverConfig
from .registration import IcpParams, IcpResult, LoopConstraint, SubmapParams
from .scancontext import Descriptor, DescriptorParams, LoopCandidate, SearchParams
from .simulator import AteReport, DriftModel, LidarModel, Scene, World

# A simple mypy result type
Result = Result
"""see `loopgraph.errors.Result`."""

__all__ = [
    "Pose",
    "Twist",
    "PointCloud",
    "CloudFormat",
    "Descriptor",
    "DescriptorParams",
    "SearchParams",
    "LoopCandidate",
    "IcpParams",
    "IcpResult",
    "SubmapParams",
    "LoopConstraint",
    "Factor",
    "FactorKind",
    "Kernel",
    "KernelKind",
    "SolverConfig",
    "SolveReport",
    "Frame",
    "Keyframe",
    "SlamResult",
    "PipelineConfig",
    "World",
    "LidarModel",
    "DriftModel",
    "Scene",
    "AteReport",
    "Error",
    "ErrorKind",
    "Result",
]
