"""Pose graph with robust loop factors, solved by Levenberg-Marquardt.

Every factor contributes rho(chi^2) to the cost, where chi^2 is the squared
Mahalanobis norm of its SE(3) error and rho is the factor's robust kernel. At
each iteration the whitened residual and Jacobian of a factor are scaled by
the square root of the kernel weight (iteratively reweighted least squares)
and a damped Gauss-Newton step is taken on all poses at once. A step is kept
only if it lowers the robust cost.
"""
from __future__ import annotations

# std
from dataclasses import dataclass, field
from enum import Enum
import re
from typing import Optional, Sequence
import warnings

# external
import numpy as np
from scipy import sparse
from scipy.sparse.linalg import MatrixRankWarning, spsolve

# module
from ._logging import logger
from .errors import ErrorKind, LoopGraphError
from .geometry import (
    adjoint,
    compose,
    inverse,
    Pose,
    se3_exp_vector,
    se3_log_vector,
    se3_right_jacobian_inverse,
)

# Central difference step of numeric Jacobians
_FD_STEP = 1e-6


# --------------------------------------------------------------------------
# Robust kernels
# --------------------------------------------------------------------------
class KernelKind(str, Enum):
    """Robust kernels for factor residuals."""

    none = "none"
    huber = "huber"
    cauchy = "cauchy"
    scaled = "scaled"
    """Fixed, externally supplied scaling factor."""
    dcs = "dcs"
    """Dynamic covariance scaling."""


_KERNEL_RE = re.compile(r"^\s*([a-z]+)\s*(?:\(\s*([^)\s]+)\s*\))?\s*$")


@dataclass(frozen=True)
class Kernel:
    """A robust kernel and its parameter."""

    kind: KernelKind = KernelKind.none
    param: float = 1.0

    def __post_init__(self: Kernel) -> None:
        """Check the parameter."""
        if not self.param > 0:
            raise LoopGraphError(
                ErrorKind.InvalidParameter,
                f"{self.kind.value} kernel parameter must be > 0, got {self.param}",
            )

    @classmethod
    def parse(cls: type[Kernel], text: str) -> Kernel:
        """Parse 'none', 'huber(k)', 'cauchy(c)', 'scaled(s)' or 'dcs(phi)'."""
        m = _KERNEL_RE.match(text)
        if m is None:
            raise LoopGraphError(
                ErrorKind.InvalidParameter, f"bad kernel spec '{text}'"
            )
        try:
            kind = KernelKind(m.group(1))
        except ValueError:
            raise LoopGraphError(
                ErrorKind.InvalidParameter, f"unknown kernel '{m.group(1)}'"
            )
        if kind == KernelKind.none:
            return cls()
        if m.group(2) is None:
            raise LoopGraphError(
                ErrorKind.InvalidParameter, f"kernel '{text}' needs a parameter"
            )
        try:
            param = float(m.group(2))
        except ValueError:
            raise LoopGraphError(
                ErrorKind.InvalidParameter, f"bad kernel parameter in '{text}'"
            )
        return cls(kind, param)

    def __str__(self: Kernel) -> str:
        """Inverse of parse()."""
        if self.kind == KernelKind.none:
            return "none"
        return f"{self.kind.value}({self.param!r})"

    def weight(self: Kernel, e_norm: float) -> float:
        """See `robust_weight()`."""
        return robust_weight(e_norm, self)

    def rho(self: Kernel, chi2: float) -> float:
        """Robust cost of a squared Mahalanobis norm.

        Its derivative with respect to chi2 is the kernel weight.
        """
        p = self.param
        if self.kind == KernelKind.none:
            return chi2
        elif self.kind == KernelKind.huber:
            e = np.sqrt(chi2)
            return chi2 if e <= p else float(2 * p * e - p * p)
        elif self.kind == KernelKind.cauchy:
            return float(p * p * np.log1p(chi2 / (p * p)))
        elif self.kind == KernelKind.scaled:
            return min(p, 1.0) * chi2
        else:
            if chi2 <= p:
                return chi2
            return 4 * p * chi2 / (p + chi2) - p


def robust_weight(e_norm: float, kernel: Kernel) -> float:
    """Multiplicative weight of a factor with Mahalanobis norm e_norm.

    - none: 1
    - huber(k): min(1, k / e_norm)
    - cauchy(c): 1 / (1 + (e_norm / c)^2)
    - scaled(s): s, clamped to (0, 1]
    - dcs(phi): s^2 with s = min(1, 2 phi / (phi + e_norm^2))

    Returns:
        A weight in (0, 1].

    """
    p = kernel.param
    if kernel.kind == KernelKind.none:
        return 1.0
    elif kernel.kind == KernelKind.huber:
        return 1.0 if e_norm <= p else p / e_norm
    elif kernel.kind == KernelKind.cauchy:
        return 1.0 / (1.0 + (e_norm / p) ** 2)
    elif kernel.kind == KernelKind.scaled:
        return min(p, 1.0)
    else:
        s = min(1.0, 2 * p / (p + e_norm * e_norm))
        return s * s


# --------------------------------------------------------------------------
# Factors
# --------------------------------------------------------------------------
class FactorKind(str, Enum):
    """What a factor measures."""

    prior = "prior"
    odometry = "odometry"
    loop = "loop"


def diag_covariance(sigma_t: float, sigma_r: float) -> np.ndarray:
    """6x6 diagonal covariance from translation and rotation sigmas."""
    return np.diag([sigma_t**2] * 3 + [sigma_r**2] * 3)


@dataclass(frozen=True, eq=False)
class Factor:
    """A measured pose (prior) or relative pose between poses i and j."""

    kind: FactorKind
    i: int
    j: Optional[int]
    measurement: Pose
    covariance: np.ndarray
    robust: Kernel = field(default_factory=Kernel)
    whitener: np.ndarray = field(init=False, repr=False)
    """W with W^T W = covariance^-1."""

    def __post_init__(self: Factor) -> None:
        """Check the covariance and compute the whitener."""
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (6, 6):
            raise LoopGraphError(
                ErrorKind.InvalidParameter, f"covariance shape {cov.shape} != (6, 6)"
            )
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise LoopGraphError(
                ErrorKind.InvalidParameter, "covariance is not symmetric"
            )
        if np.min(np.linalg.eigvalsh(cov)) <= 0:
            raise LoopGraphError(
                ErrorKind.InvalidParameter, "covariance is not positive definite"
            )
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)
        info = np.linalg.inv(cov)
        info = (info + info.T) / 2
        object.__setattr__(self, "whitener", np.linalg.cholesky(info).T)

    @property
    def information(self: Factor) -> np.ndarray:
        """Inverse covariance."""
        out: np.ndarray = self.whitener.T @ self.whitener
        return out

    @property
    def variables(self: Factor) -> list[int]:
        """Indices of the poses this factor depends on."""
        return [self.i] if self.j is None else [self.i, self.j]


def _error(f: Factor, poses: Sequence[Pose]) -> np.ndarray:
    zinv = inverse(f.measurement)
    if f.j is None:
        return se3_log_vector(compose(zinv, poses[f.i]))
    return se3_log_vector(compose(zinv, compose(inverse(poses[f.i]), poses[f.j])))


def factor_error(f: Factor, g: PoseGraph) -> np.ndarray:
    """SE(3) error of a factor at the current estimates.

    Prior: log(Z^-1 X_i). Odometry and loop: log(Z^-1 X_i^-1 X_j).

    Raises:
        LoopGraphError: AngleNearPi if the error rotation is too close to pi,
            UnknownIndex for a factor outside the graph.

    """
    for v in f.variables:
        g._check(v)
    return _error(f, g.poses)


def _numeric_jacobians(f: Factor, poses: Sequence[Pose]) -> list[np.ndarray]:
    out = []
    for v in f.variables:
        jac = np.zeros((6, 6))
        for k in range(6):
            step = np.zeros(6)
            step[k] = _FD_STEP
            plus = list(poses)
            minus = list(poses)
            plus[v] = compose(se3_exp_vector(step), poses[v])
            minus[v] = compose(se3_exp_vector(-step), poses[v])
            jac[:, k] = (_error(f, plus) - _error(f, minus)) / (2 * _FD_STEP)
        out += [jac]
    return out


def _analytic_jacobians(
    f: Factor, poses: Sequence[Pose], e: np.ndarray
) -> list[np.ndarray]:
    jr_inv = se3_right_jacobian_inverse(e)
    if f.j is None:
        return [jr_inv @ adjoint(inverse(poses[f.i]))]
    jj = jr_inv @ adjoint(inverse(poses[f.j]))
    return [-jj, jj]


def factor_jacobians(
    f: Factor, g: PoseGraph, method: str = "numeric"
) -> list[np.ndarray]:
    """Derivatives of factor_error() under left perturbations of each pose.

    Returns:
        One 6x6 matrix per entry of `f.variables`.

    """
    if method == "analytic":
        return _analytic_jacobians(f, g.poses, _error(f, g.poses))
    return _numeric_jacobians(f, g.poses)


# --------------------------------------------------------------------------
# Graph
# --------------------------------------------------------------------------
class PoseGraph:
    """Pose estimates and the factors between them."""

    def __init__(self: PoseGraph) -> None:
        """Create an empty graph."""
        self.poses: list[Pose] = []
        self.factors: list[Factor] = []

    def __len__(self: PoseGraph) -> int:
        """Number of poses."""
        return len(self.poses)

    def _check(self: PoseGraph, idx: int) -> None:
        if not 0 <= idx < len(self.poses):
            raise LoopGraphError(
                ErrorKind.UnknownIndex, f"no pose {idx} among {len(self.poses)}"
            )

    def add_pose(self: PoseGraph, pose: Pose) -> int:
        """Append a pose variable and return its index."""
        self.poses.append(pose)
        return len(self.poses) - 1

    def add_factor(self: PoseGraph, f: Factor) -> None:
        """Append a factor whose poses already exist."""
        for v in f.variables:
            self._check(v)
        self.factors.append(f)

    def add_prior(self: PoseGraph, idx: int, pose: Pose, cov: np.ndarray) -> None:
        """Anchor a pose.

        Raises:
            LoopGraphError: UnknownIndex if the pose does not exist.

        """
        self.add_factor(Factor(FactorKind.prior, idx, None, pose, cov))

    def add_odometry_factor(
        self: PoseGraph, i: int, z: Pose, cov: np.ndarray
    ) -> None:
        """Connect pose i to pose i + 1.

        Pose i + 1 is created by dead reckoning, X_i.z, if it does not exist
        yet.

        Raises:
            LoopGraphError: UnknownIndex if pose i does not exist.

        """
        self._check(i)
        f = Factor(FactorKind.odometry, i, i + 1, z, cov)
        if i + 1 == len(self.poses):
            self.poses.append(compose(self.poses[i], z))
        self.factors.append(f)

    def add_loop_factor(
        self: PoseGraph,
        j: int,
        k: int,
        z: Pose,
        cov: np.ndarray,
        robust: Optional[Kernel] = None,
    ) -> None:
        """Add a loop constraint from pose j to pose k.

        Raises:
            LoopGraphError: UnknownIndex if a pose does not exist,
                InvalidPair unless j < k.

        """
        self._check(j)
        self._check(k)
        if j >= k:
            raise LoopGraphError(
                ErrorKind.InvalidPair, f"loop factor needs j < k, got {j}, {k}"
            )
        if robust is None:
            robust = Kernel()
        self.factors.append(Factor(FactorKind.loop, j, k, z, cov, robust))

    def count(self: PoseGraph, kind: FactorKind) -> int:
        """Number of factors of a kind."""
        return sum(1 for f in self.factors if f.kind == kind)

    def cost(self: PoseGraph, poses: Optional[Sequence[Pose]] = None) -> float:
        """Robust cost, sum of rho(chi^2), at the current (or given) poses."""
        if poses is None:
            poses = self.poses
        total = 0.0
        for f in self.factors:
            r = f.whitener @ _error(f, poses)
            total += f.robust.rho(float(r @ r))
        return total

    def optimize(self: PoseGraph, config: Optional[SolverConfig] = None) -> SolveReport:
        """See `optimize()`."""
        return optimize(self, config)


# --------------------------------------------------------------------------
# Solver
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class SolverConfig:
    """Levenberg-Marquardt settings."""

    max_iters: int = 100
    lambda_init: float = 1e-4
    cost_tol: float = 1e-9
    """Stop when the relative cost decrease of a step is below this."""

    step_tol: float = 1e-9
    """Stop when the step norm is below this."""

    lambda_max: float = 1e10
    """Give up when the damping grows past this."""

    jacobian: str = "numeric"
    """'numeric' (central differences) or 'analytic'."""

    def __post_init__(self: SolverConfig) -> None:
        """Check parameter ranges."""
        if self.jacobian not in ("numeric", "analytic"):
            raise LoopGraphError(
                ErrorKind.InvalidParameter,
                f"solver.jacobian must be numeric or analytic, got {self.jacobian}",
            )
        if self.max_iters < 1 or not (
            self.lambda_init > 0
            and self.cost_tol > 0
            and self.step_tol > 0
            and self.lambda_max > 0
        ):
            raise LoopGraphError(
                ErrorKind.InvalidParameter, f"bad solver settings {self}"
            )


@dataclass
class SolveReport:
    """Summary of an optimize() call."""

    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    cost_history: list[float] = field(default_factory=list)
    """Cost before the first and after every accepted step."""


def _normal_equations(
    g: PoseGraph, method: str
) -> tuple[sparse.csc_matrix, np.ndarray]:
    n = 6 * len(g.poses)
    b = np.zeros(n)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    block_r = np.repeat(np.arange(6), 6)
    block_c = np.tile(np.arange(6), 6)

    for f in g.factors:
        e = _error(f, g.poses)
        r = f.whitener @ e
        sqrt_w = np.sqrt(f.robust.weight(float(np.sqrt(r @ r))))
        r = sqrt_w * r
        if method == "analytic":
            jacs = _analytic_jacobians(f, g.poses, e)
        else:
            jacs = _numeric_jacobians(f, g.poses)
        variables = f.variables
        jacs = [sqrt_w * (f.whitener @ jac) for jac in jacs]

        for a, ja in zip(variables, jacs):
            b[6 * a : 6 * a + 6] += ja.T @ r
            for c, jc in zip(variables, jacs):
                rows += [6 * a + block_r]
                cols += [6 * c + block_c]
                data += [(ja.T @ jc).reshape(-1)]

    h = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsc()
    return h, b


def _solve(h: sparse.csc_matrix, b: np.ndarray, lam: float) -> np.ndarray:
    a = (h + lam * sparse.identity(h.shape[0], format="csc")).tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            delta = spsolve(a, -b)
        except (MatrixRankWarning, RuntimeError) as e:
            raise LoopGraphError(ErrorKind.LinearSolveFailure, str(e))
    delta = np.atleast_1d(delta)
    if not np.all(np.isfinite(delta)):
        raise LoopGraphError(
            ErrorKind.LinearSolveFailure, "normal equations have no finite solution"
        )
    return delta


def _apply(poses: Sequence[Pose], delta: np.ndarray) -> list[Pose]:
    return [
        compose(se3_exp_vector(delta[6 * i : 6 * i + 6]), p).renormalized()
        for i, p in enumerate(poses)
    ]


def optimize(g: PoseGraph, config: Optional[SolverConfig] = None) -> SolveReport:
    """Minimize the robust cost over every pose, in place.

    Steps solve (H + lambda I) delta = -J^T r and update X_i <- exp(delta_i) X_i.
    A step that lowers the cost is kept and lambda is divided by 10;
    otherwise lambda is multiplied by 10.

    Args:
        g: The graph; its poses are overwritten.
        config: Solver settings.

    Returns:
        A `SolveReport`. `converged` is True if the relative cost decrease or
        the step norm fell below tolerance.

    Raises:
        LoopGraphError: GaugeUnfixed if the graph has no prior,
            LinearSolveFailure if the damped system cannot be solved.

    """
    if config is None:
        config = SolverConfig()
    if g.count(FactorKind.prior) == 0:
        raise LoopGraphError(
            ErrorKind.GaugeUnfixed, "the pose graph needs at least one prior"
        )

    cost = g.cost()
    report = SolveReport(cost, cost, 0, False, [cost])
    lam = config.lambda_init

    while report.iterations < config.max_iters:
        if cost == 0.0:
            report.converged = True
            break
        report.iterations += 1
        h, b = _normal_equations(g, config.jacobian)
        delta = _solve(h, b, lam)
        if np.linalg.norm(delta) < config.step_tol:
            report.converged = True
            break

        candidate = _apply(g.poses, delta)
        try:
            new_cost = g.cost(candidate)
        except LoopGraphError as e:
            if e.kind != ErrorKind.AngleNearPi:
                raise
            new_cost = np.inf

        if new_cost < cost:
            decrease = (cost - new_cost) / cost
            g.poses = candidate
            cost = new_cost
            report.cost_history.append(cost)
            lam /= 10.0
            logger.debug(
                f"lm {report.iterations}: cost {cost:.6g}, lambda {lam:.1e}"
            )
            if decrease < config.cost_tol:
                report.converged = True
                break
        else:
            lam *= 10.0
            if lam > config.lambda_max:
                logger.warning(f"lm stopped: lambda above {config.lambda_max:g}")
                break

    report.final_cost = cost
    logger.debug(
        f"optimized {len(g.poses)} poses, {len(g.factors)} factors:"
        + f" cost {report.initial_cost:.6g} -> {report.final_cost:.6g}"
        + f" in {report.iterations} iterations"
    )
    return report
