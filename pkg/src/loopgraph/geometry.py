"""SE(3) pose algebra.

Rotations are stored as 3x3 matrices. Tangent vectors are ordered (rho, phi),
that is (tx, ty, tz, rx, ry, rz), and solver updates are applied on the left:
X <- exp(delta) X.
"""
from __future__ import annotations

# std
from dataclasses import dataclass
import os
from typing import Sequence

# external
import numpy as np
from scipy.spatial.transform import Rotation

# module
from ._constants import _AnyPath
from ._logging import logger
from .errors import ErrorKind, LoopGraphError

# Below this angle, series expansions replace the closed forms.
_SMALL_ANGLE = 1e-3
# Above this angle, the rotation axis is read from the symmetric part of R.
_LARGE_ANGLE = 3.0
# Distance to pi below which the logarithm is refused.
_PI_MARGIN = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform in SE(3)."""

    rotation: np.ndarray
    """3x3 rotation matrix."""

    translation: np.ndarray
    """Translation in meters."""

    def __post_init__(self: Pose) -> None:
        """Copy and freeze the arrays."""
        object.__setattr__(self, "rotation", _frozen(self.rotation).reshape(3, 3))
        object.__setattr__(
            self, "translation", _frozen(self.translation).reshape(3)
        )

    def matrix(self: Pose) -> np.ndarray:
        """Return the 4x4 homogeneous matrix of this pose."""
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    @classmethod
    def from_matrix(cls: type[Pose], m: np.ndarray) -> Pose:
        """Make a pose from a 4x4 (or 3x4) homogeneous matrix."""
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def quaternion(self: Pose) -> np.ndarray:
        """Return the rotation as a unit quaternion (x, y, z, w)."""
        out: np.ndarray = Rotation.from_matrix(self.rotation).as_quat()
        return out

    @classmethod
    def from_quaternion(
        cls: type[Pose], translation: Sequence[float], quat: Sequence[float]
    ) -> Pose:
        """Make a pose from a translation and a (x, y, z, w) quaternion."""
        return cls(Rotation.from_quat(quat).as_matrix(), translation)

    def renormalized(self: Pose) -> Pose:
        """Project the rotation back onto SO(3)."""
        return Pose(renormalize(self.rotation), self.translation)

    def __repr__(self: Pose) -> str:
        """Print translation and rotation vector."""
        rv = Rotation.from_matrix(self.rotation).as_rotvec()
        return f"Pose(t={np.round(self.translation, 6)}, rotvec={np.round(rv, 6)})"


@dataclass(frozen=True, eq=False)
class Twist:
    """A tangent vector of SE(3)."""

    rho: np.ndarray
    """Translational part in meters."""

    phi: np.ndarray
    """Rotational part in radians, axis-angle."""

    def __post_init__(self: Twist) -> None:
        """Copy and freeze the arrays."""
        object.__setattr__(self, "rho", _frozen(self.rho).reshape(3))
        object.__setattr__(self, "phi", _frozen(self.phi).reshape(3))

    def vector(self: Twist) -> np.ndarray:
        """Return the 6-vector (rho, phi)."""
        return np.concatenate([self.rho, self.phi])

    @classmethod
    def from_vector(cls: type[Twist], v: Sequence[float]) -> Twist:
        """Make a twist from a 6-vector (rho, phi)."""
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:])


# --------------------------------------------------------------------------
# Constructors
# --------------------------------------------------------------------------
def identity() -> Pose:
    """Identity transform."""
    return Pose(np.eye(3), np.zeros(3))


def trans(x: float, y: float, z: float) -> Pose:
    """Pure translation."""
    return Pose(np.eye(3), np.array([x, y, z], dtype=float))


def rotz(angle: float) -> Pose:
    """Pure rotation about the z axis."""
    c, s = np.cos(angle), np.sin(angle)
    return Pose(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), np.zeros(3))


# --------------------------------------------------------------------------
# Group operations
# --------------------------------------------------------------------------
def compose(a: Pose, b: Pose) -> Pose:
    """Return a.b, the transform applying b then a."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    """Return the inverse transform."""
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def between(a: Pose, b: Pose) -> Pose:
    """Return the relative transform a^-1.b."""
    rt = a.rotation.T
    return Pose(rt @ b.rotation, rt @ (b.translation - a.translation))


def transform_point(p: Pose, x: Sequence[float]) -> np.ndarray:
    """Map a point by a pose: R.x + t."""
    out: np.ndarray = p.rotation @ np.asarray(x, dtype=float) + p.translation
    return out


def transform_points(p: Pose, x: np.ndarray) -> np.ndarray:
    """Map an (N, 3) array of points by a pose."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    out: np.ndarray = x @ p.rotation.T + p.translation
    return out


def renormalize(r: np.ndarray) -> np.ndarray:
    """Closest rotation matrix (polar decomposition)."""
    u, _, vt = np.linalg.svd(r)
    if np.linalg.det(u @ vt) < 0:
        u[:, -1] *= -1
    out: np.ndarray = u @ vt
    return out


def rotation_angle(p: Pose) -> float:
    """Angle of the rotation part, in [0, pi]."""
    return float(np.linalg.norm(_so3_log(p.rotation, check=False)))


def yaw(p: Pose) -> float:
    """Heading about the z axis."""
    return float(np.arctan2(p.rotation[1, 0], p.rotation[0, 0]))


def flatten(p: Pose) -> Pose:
    """Keep x, y and yaw; drop z, roll and pitch."""
    c, s = np.cos(yaw(p)), np.sin(yaw(p))
    r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose(r, np.array([p.translation[0], p.translation[1], 0.0]))


# --------------------------------------------------------------------------
# Exponential and logarithm
# --------------------------------------------------------------------------
def hat(v: Sequence[float]) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of hat()."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _coefficients(theta: float) -> tuple[float, float, float]:
    """Return sin(t)/t, (1-cos(t))/t^2 and (t-sin(t))/t^3."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s = np.sin(theta)
    half = np.sin(theta / 2.0)
    return (
        s / theta,
        2.0 * half * half / (theta * theta),
        (theta - s) / theta**3,
    )


def so3_exp(phi: Sequence[float]) -> np.ndarray:
    """Rodrigues formula."""
    phi = np.asarray(phi, dtype=float)
    k = hat(phi)
    a, b, _ = _coefficients(float(np.linalg.norm(phi)))
    out: np.ndarray = np.eye(3) + a * k + b * (k @ k)
    return out


def _so3_log(r: np.ndarray, check: bool = True) -> np.ndarray:
    w = vee(r - r.T) / 2.0  # sin(theta) * axis
    sin_t = float(np.linalg.norm(w))
    cos_t = (np.trace(r) - 1.0) / 2.0
    theta = float(np.arctan2(sin_t, cos_t))

    if check and np.pi - theta < _PI_MARGIN:
        raise LoopGraphError(
            ErrorKind.AngleNearPi,
            f"rotation angle {theta:.9f} is within {_PI_MARGIN} of pi",
        )

    if theta < _SMALL_ANGLE:
        return w * (1.0 + theta * theta / 6.0)

    if theta < _LARGE_ANGLE:
        return w * (theta / sin_t)

    # Near pi, sin(theta) is small: read the axis from R + R^T instead.
    b = (r + r.T) / 2.0 - cos_t * np.eye(3)
    k = int(np.argmax(np.diag(b)))
    axis = b[:, k] / np.sqrt(b[k, k] * (1.0 - cos_t))
    axis /= np.linalg.norm(axis)
    if np.dot(axis, w) < 0:
        axis = -axis
    out: np.ndarray = axis * theta
    return out


def so3_log(r: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix.

    Raises:
        LoopGraphError: AngleNearPi when the angle is within 1e-6 of pi.

    """
    return _so3_log(np.asarray(r, dtype=float))


def _v_matrix(phi: np.ndarray) -> np.ndarray:
    k = hat(phi)
    _, b, c = _coefficients(float(np.linalg.norm(phi)))
    out: np.ndarray = np.eye(3) + b * k + c * (k @ k)
    return out


def _v_inverse(phi: np.ndarray) -> np.ndarray:
    k = hat(phi)
    theta = float(np.linalg.norm(phi))
    if theta < _SMALL_ANGLE:
        d = 1.0 / 12.0 + theta * theta / 720.0
    else:
        half = theta / 2.0
        d = (1.0 - half / np.tan(half)) / (theta * theta)
    out: np.ndarray = np.eye(3) - 0.5 * k + d * (k @ k)
    return out


def se3_exp(t: Twist) -> Pose:
    """Exponential map from the tangent space to SE(3)."""
    return Pose(so3_exp(t.phi), _v_matrix(t.phi) @ t.rho)


def se3_log(p: Pose) -> Twist:
    """Logarithm map of SE(3), on the principal branch.

    Args:
        p: The pose.

    Returns:
        The twist t such that se3_exp(t) == p.

    Raises:
        LoopGraphError: AngleNearPi when the rotation angle is within 1e-6 of
            pi.

    """
    phi = _so3_log(p.rotation)
    return Twist(_v_inverse(phi) @ p.translation, phi)


def se3_log_vector(p: Pose) -> np.ndarray:
    """se3_log() as a (rho, phi) 6-vector."""
    phi = _so3_log(p.rotation)
    return np.concatenate([_v_inverse(phi) @ p.translation, phi])


def se3_exp_vector(v: np.ndarray) -> Pose:
    """se3_exp() of a (rho, phi) 6-vector."""
    return se3_exp(Twist.from_vector(v))


# --------------------------------------------------------------------------
# Jacobians
# --------------------------------------------------------------------------
def adjoint(p: Pose) -> np.ndarray:
    """6x6 adjoint of a pose, for (rho, phi) ordering."""
    out = np.zeros((6, 6))
    out[:3, :3] = p.rotation
    out[:3, 3:] = hat(p.translation) @ p.rotation
    out[3:, 3:] = p.rotation
    return out


def _so3_left_jacobian_inverse(phi: np.ndarray) -> np.ndarray:
    return _v_inverse(phi)


def _q_matrix(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    if theta < 1e-2:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0
        c2 = 1.0 / 24.0 - t2 / 720.0
        c3 = 1.0 / 120.0 - t2 / 2520.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        c1 = (theta - s) / theta**3
        c2 = (theta * theta + 2.0 * c - 2.0) / (2.0 * theta**4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta**5)
    rx, px = hat(rho), hat(phi)
    pr, rp = px @ rx, rx @ px
    prp = pr @ px
    out: np.ndarray = (
        0.5 * rx
        + c1 * (pr + rp + prp)
        + c2 * (px @ pr + rp @ px - 3.0 * prp)
        + c3 * (prp @ px + px @ prp)
    )
    return out


def se3_left_jacobian_inverse(v: np.ndarray) -> np.ndarray:
    """Inverse of the SE(3) left Jacobian at the (rho, phi) 6-vector v."""
    rho, phi = v[:3], v[3:]
    jinv = _so3_left_jacobian_inverse(phi)
    q = _q_matrix(rho, phi)
    out = np.zeros((6, 6))
    out[:3, :3] = jinv
    out[:3, 3:] = -jinv @ q @ jinv
    out[3:, 3:] = jinv
    return out


def se3_right_jacobian_inverse(v: np.ndarray) -> np.ndarray:
    """Inverse of the SE(3) right Jacobian at the (rho, phi) 6-vector v."""
    return se3_left_jacobian_inverse(-np.asarray(v, dtype=float))


# --------------------------------------------------------------------------
# KITTI pose files
# --------------------------------------------------------------------------
def read_poses(path: _AnyPath) -> list[Pose]:
    """Read a KITTI pose file, 12 numbers per line (row-major [R|t]).

    Blank lines and lines starting with # are skipped.

    Raises:
        LoopGraphError: ParseError with the line number of a bad line,
            IoError if the file cannot be read.

    """
    try:
        with open(path, "r") as f:
            lines = f.readlines()
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{path}: {e}")

    out = []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if len(tokens) == 0 or tokens[0].startswith("#"):
            continue
        if len(tokens) != 12:
            raise LoopGraphError(
                ErrorKind.ParseError,
                f"{path}:{lineno}: expected 12 numbers, got {len(tokens)}",
            )
        try:
            values = np.array([float(tok) for tok in tokens]).reshape(3, 4)
        except ValueError as e:
            raise LoopGraphError(ErrorKind.ParseError, f"{path}:{lineno}: {e}")
        out += [Pose(renormalize(values[:, :3]), values[:, 3])]

    logger.debug(f"read {len(out)} poses from {path}")
    return out


def format_pose(p: Pose) -> str:
    """One KITTI line for a pose, '%.9f' formatting."""
    m = np.hstack([p.rotation, p.translation[:, None]]).reshape(-1)
    return " ".join("%.9f" % v for v in m)


def write_poses(path: _AnyPath, poses: Sequence[Pose]) -> None:
    """Write poses in the KITTI format.

    Raises:
        LoopGraphError: IoError if the file cannot be written.

    """
    try:
        with open(path, "w") as f:
            for p in poses:
                f.write(format_pose(p) + "\n")
    except OSError as e:
        raise LoopGraphError(ErrorKind.IoError, f"{os.fspath(path)}: {e}")
