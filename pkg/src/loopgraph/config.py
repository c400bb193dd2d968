"""Configuration of the SLAM pipeline.

Configuration files are flat `key = value` text. Nested settings use dotted
keys and `#` starts a comment:

```
keyframe_gap_m = 0.5
planar_mode = true
loop_kernel = cauchy(1.0)
icp.max_corr_dist = 1.0
solver.jacobian = analytic
```

Unknown keys are rejected. Values are layered: defaults, then the config file
(given explicitly or by the LOOPGRAPH_CONFIG environment variable), then
command-line flags.
"""
from __future__ import annotations

# std
from dataclasses import dataclass, field, fields, replace
import json
import os
import typing
from typing import Any, Mapping, Optional

# external
import chevron
import numpy as np

# module
from ._constants import _AnyPath, CONFIG_ENV, short_digest
from ._logging import logger
from .errors import ErrorKind, LoopGraphError
from .posegraph import diag_covariance, Kernel, KernelKind, SolverConfig
from .registration import IcpParams, SubmapParams
from .scancontext import DescriptorParams, SearchParams

_SECTIONS = ("descriptor", "search", "icp", "submap", "solver")
_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")

_PROVENANCE = """\
# loopgraph effective configuration
# digest {{digest}}
{{{body}}}"""


def _cauchy() -> Kernel:
    return Kernel(KernelKind.cauchy, 1.0)


@dataclass(frozen=True)
class PipelineConfig:
    """Settings of a SLAM run.

    Every field can be set from a config file or the command line.
    """

    keyframe_gap_m: float = 1.0
    """A new keyframe is taken after this much translation (m)."""

    keyframe_gap_rad: float = 0.2
    """... or after this much rotation (rad)."""

    planar_mode: bool = False
    """Zero z in scans and keep only x, y and yaw of odometry poses, for
    2D sensors such as radars."""

    enable_loops: bool = True
    """If False, no loop detection is done and the result is the
    prior-anchored odometry."""

    scan_leaf: float = 0.25
    """Voxel leaf (m) of the scans kept in keyframes and saved."""

    map_leaf: float = 0.2
    """Voxel leaf (m) of assembled maps."""

    deterministic: bool = True
    """If False and workers > 1, scans are read ahead by a thread pool."""

    workers: int = 1

    seed: int = 0
    """Recorded in the saved config. The back-end draws no random numbers,
    so outputs do not depend on it."""

    prior_sigma_t: float = 1e-3
    prior_sigma_r: float = 1e-3
    odom_sigma_t: float = 0.1
    odom_sigma_r: float = 0.01
    loop_sigma_t: float = 0.3
    loop_sigma_r: float = 0.03

    loop_kernel: Kernel = field(default_factory=_cauchy)
    """Robust kernel of loop factors; odometry factors are never weighted."""

    descriptor: DescriptorParams = field(default_factory=DescriptorParams)
    search: SearchParams = field(default_factory=SearchParams)
    icp: IcpParams = field(default_factory=IcpParams)
    submap: SubmapParams = field(default_factory=SubmapParams)
    solver: SolverConfig = field(default_factory=SolverConfig)

    odom: Optional[str] = None
    """Odometry file, KITTI or TUM."""

    scans: Optional[str] = None
    """Directory of scans, one per odometry pose."""

    def __post_init__(self: PipelineConfig) -> None:
        """Check parameter ranges."""
        positive = [
            "keyframe_gap_m",
            "keyframe_gap_rad",
            "scan_leaf",
            "map_leaf",
            "prior_sigma_t",
            "prior_sigma_r",
            "odom_sigma_t",
            "odom_sigma_r",
            "loop_sigma_t",
            "loop_sigma_r",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                raise LoopGraphError(ErrorKind.InvalidParameter, f"{name} must be > 0")
        if self.workers < 1:
            raise LoopGraphError(ErrorKind.InvalidParameter, "workers must be >= 1")

    # ----------------------------------------------------------------------
    # covariances
    @property
    def prior_covariance(self: PipelineConfig) -> np.ndarray:
        """Covariance of the prior on the first keyframe."""
        return diag_covariance(self.prior_sigma_t, self.prior_sigma_r)

    @property
    def odom_covariance(self: PipelineConfig) -> np.ndarray:
        """Covariance of odometry factors."""
        return diag_covariance(self.odom_sigma_t, self.odom_sigma_r)

    @property
    def loop_covariance(self: PipelineConfig) -> np.ndarray:
        """Covariance of loop factors."""
        return diag_covariance(self.loop_sigma_t, self.loop_sigma_r)

    # ----------------------------------------------------------------------
    # flat key = value view
    def items(self: PipelineConfig) -> list[tuple[str, str]]:
        """Every setting as a (dotted key, text value) pair."""
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in _SECTIONS:
                for sub in fields(value):
                    out += [(f"{f.name}.{sub.name}", _format(getattr(value, sub.name)))]
            else:
                out += [(f.name, _format(value))]
        return out

    def with_overrides(
        self: PipelineConfig, values: Mapping[str, Any]
    ) -> PipelineConfig:
        """Return a copy with some settings replaced.

        Args:
            values: Dotted keys mapped to values, either typed or as text.

        Returns:
            The new configuration.

        Raises:
            LoopGraphError: InvalidParameter for unknown keys and bad values.

        """
        top: dict[str, Any] = {}
        nested: dict[str, dict[str, Any]] = {}
        hints = typing.get_type_hints(PipelineConfig)
        for key, value in values.items():
            head, _, tail = key.partition(".")
            if tail:
                if head not in _SECTIONS:
                    raise _unknown(key)
                sub_hints = typing.get_type_hints(type(getattr(self, head)))
                if tail not in sub_hints:
                    raise _unknown(key)
                value = _coerce(sub_hints[tail], value, key)
                nested.setdefault(head, {})[tail] = value
            else:
                if head not in hints or head in _SECTIONS:
                    raise _unknown(key)
                top[head] = _coerce(hints[head], value, key)

        for head, changes in nested.items():
            top[head] = replace(getattr(self, head), **changes)
        return replace(self, **top)

    def dump(self: PipelineConfig) -> str:
        """Render the configuration as a config file."""
        return "".join(f"{key} = {value}\n" for key, value in self.items())

    def digest(self: PipelineConfig) -> str:
        """Short sha1 digest of `dump()`."""
        return short_digest(self.dump())

    def save(self: PipelineConfig, path: _AnyPath) -> None:
        """Write `dump()` with a provenance header."""
        text = chevron.render(_PROVENANCE, dict(digest=self.digest(), body=self.dump()))
        try:
            with open(path, "w") as f:
                f.write(text)
        except OSError as e:
            raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")

    def pack(self: PipelineConfig) -> str:
        """Pack the configuration to a JSON string."""
        return json.dumps(dict(self.items()))

    @classmethod
    def unpack(cls: type[PipelineConfig], data: str) -> PipelineConfig:
        """Unpack a configuration from a JSON string."""
        return cls().with_overrides(json.loads(data))

    @classmethod
    def from_text(
        cls: type[PipelineConfig],
        text: str,
        base: Optional[PipelineConfig] = None,
        where: str = "<config>",
    ) -> PipelineConfig:
        """Parse a config file on top of `base` (defaults if None).

        Raises:
            LoopGraphError: ParseError with the line number of a line that is
                not `key = value`, InvalidParameter for unknown keys or bad
                values.

        """
        if base is None:
            base = cls()
        values: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if len(line) == 0:
                continue
            key, eq, value = line.partition("=")
            if not eq or not key.strip():
                raise LoopGraphError(
                    ErrorKind.ParseError, f"{where}:{lineno}: expected key = value"
                )
            values[key.strip()] = value.strip()
        return base.with_overrides(values)


def load(
    path: Optional[_AnyPath] = None, base: Optional[PipelineConfig] = None
) -> PipelineConfig:
    """Load a config file, falling back to $LOOPGRAPH_CONFIG, then defaults.

    Raises:
        LoopGraphError: IoError if the file cannot be read, or any error of
            `PipelineConfig.from_text()`.

    """
    if path is None:
        path = os.environ.get(CONFIG_ENV, None)
    if path is None:
        return base if base is not None else PipelineConfig()

    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")
    logger.info(f"configuration from {os.fspath(path)}")
    return PipelineConfig.from_text(text, base, os.fspath(path))


def _unknown(key: str) -> LoopGraphError:
    return LoopGraphError(ErrorKind.InvalidParameter, f"unknown key {key}")


def _format(value: Any) -> str:
    if value is None:
        return "none"
    elif isinstance(value, bool):
        return "true" if value else "false"
    elif isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(tp: Any, value: Any, key: str) -> Any:
    """Convert a text value to a field type."""
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if tp is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text}")
        elif tp is int:
            return int(text)
        elif tp is float:
            return float(text)
        elif tp is Kernel:
            return Kernel.parse(text)
        elif tp == Optional[str]:
            return None if text.lower() in ("", "none") else text
        else:
            return text
    except ValueError as e:
        raise LoopGraphError(ErrorKind.InvalidParameter, f"{key}: {e}")
