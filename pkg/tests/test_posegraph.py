"""Test of robust kernels, factors and the Levenberg-Marquardt solver."""
# external
import numpy as np
import pytest

# loopgraph
from loopgraph.errors import ErrorKind, LoopGraphError
from loopgraph.geometry import (
    between,
    compose,
    identity,
    inverse,
    Pose,
    rotz,
    se3_exp_vector,
    trans,
)
from loopgraph.posegraph import (
    diag_covariance,
    Factor,
    factor_error,
    factor_jacobians,
    FactorKind,
    Kernel,
    KernelKind,
    PoseGraph,
    robust_weight,
    SolverConfig,
)
from loopgraph.simulator import (
    DriftModel,
    evaluate_ate,
    simulate_odometry,
    square_loop,
)

EYE = np.eye(6)


def test_kernel_weights() -> None:
    """Test robust weights at known residuals."""
    assert robust_weight(3.0, Kernel()) == 1.0
    assert robust_weight(0.5, Kernel(KernelKind.huber, 1.0)) == 1.0
    assert robust_weight(4.0, Kernel(KernelKind.huber, 1.0)) == 0.25
    assert robust_weight(1.0, Kernel(KernelKind.cauchy, 1.0)) == 0.5
    assert robust_weight(10.0, Kernel(KernelKind.scaled, 0.3)) == 0.3
    assert robust_weight(10.0, Kernel(KernelKind.scaled, 3.0)) == 1.0
    assert robust_weight(0.1, Kernel(KernelKind.dcs, 1.0)) == 1.0
    assert robust_weight(100.0, Kernel(KernelKind.dcs, 1.0)) < 1e-3


@pytest.mark.parametrize(
    "spec", ["none", "huber(1.0)", "cauchy(0.5)", "scaled(0.25)", "dcs(2.0)"]
)
@pytest.mark.parametrize("chi2", [0.3, 1.7, 25.0])
def test_kernel_rho_derivative(spec: str, chi2: float) -> None:
    """Test that each kernel weight is the derivative of its cost."""
    k = Kernel.parse(spec)
    h = 1e-6
    slope = (k.rho(chi2 + h) - k.rho(chi2 - h)) / (2 * h)
    assert slope == pytest.approx(k.weight(np.sqrt(chi2)), rel=1e-5)


def test_kernel_parse() -> None:
    """Test kernel specs."""
    assert Kernel.parse("none") == Kernel()
    assert Kernel.parse(" cauchy( 2 ) ") == Kernel(KernelKind.cauchy, 2.0)
    assert str(Kernel.parse("huber(0.5)")) == "huber(0.5)"
    dcs = Kernel(KernelKind.dcs, 3.0)
    assert Kernel.parse(str(dcs)) == dcs
    for bad in ["tukey(1)", "cauchy", "cauchy(x)", "cauchy(-1)", "huber(1"]:
        with pytest.raises(LoopGraphError) as e:
            Kernel.parse(bad)
        assert e.value.kind == ErrorKind.InvalidParameter


def test_odometry_error() -> None:
    """Test the error of an odometry factor away from its measurement."""
    g = PoseGraph()
    g.add_pose(identity())
    g.add_pose(identity())
    g.add_factor(Factor(FactorKind.odometry, 0, 1, trans(1.0, 0.0, 0.0), EYE))
    assert np.allclose(factor_error(g.factors[0], g), [-1, 0, 0, 0, 0, 0])


def test_yaw_error() -> None:
    """Test the rotational part of an error."""
    g = PoseGraph()
    g.add_pose(identity())
    g.add_pose(rotz(0.3))
    g.add_factor(Factor(FactorKind.loop, 0, 1, identity(), EYE))
    e = factor_error(g.factors[0], g)
    assert np.allclose(e[:3], 0.0)
    assert np.allclose(e[3:], [0.0, 0.0, 0.3])


def test_prior_error() -> None:
    """Test that a satisfied prior has zero error."""
    g = PoseGraph()
    p = compose(trans(1.0, 2.0, 3.0), rotz(1.0))
    g.add_pose(p)
    g.add_prior(0, p, EYE)
    assert np.allclose(factor_error(g.factors[0], g), 0.0)
    assert g.cost() == pytest.approx(0.0, abs=1e-20)


@pytest.mark.parametrize(
    "kind", [FactorKind.prior, FactorKind.odometry, FactorKind.loop]
)
def test_analytic_jacobians(kind: FactorKind) -> None:
    """Test closed-form Jacobians against central differences on random factors."""
    rng = np.random.default_rng(5)
    for _ in range(100):
        g = PoseGraph()
        g.add_pose(se3_exp_vector(rng.normal(0.0, 0.3, 6)))
        g.add_pose(se3_exp_vector(rng.normal(0.0, 0.3, 6)))
        z = se3_exp_vector(rng.normal(0.0, 0.3, 6))
        f = Factor(kind, 0, None if kind == FactorKind.prior else 1, z, EYE)
        numeric = factor_jacobians(f, g, "numeric")
        analytic = factor_jacobians(f, g, "analytic")
        assert len(numeric) == len(analytic) == len(f.variables)
        for a, b in zip(numeric, analytic):
            assert np.allclose(a, b, rtol=1e-5, atol=1e-6)


def test_factor_validation() -> None:
    """Test covariance checks and index checks."""
    with pytest.raises(LoopGraphError) as e:
        Factor(FactorKind.prior, 0, None, identity(), np.eye(3))
    assert e.value.kind == ErrorKind.InvalidParameter

    not_pd = np.eye(6)
    not_pd[0, 0] = -1.0
    with pytest.raises(LoopGraphError) as e:
        Factor(FactorKind.prior, 0, None, identity(), not_pd)
    assert e.value.kind == ErrorKind.InvalidParameter

    cov = diag_covariance(0.1, 0.01)
    f = Factor(FactorKind.prior, 0, None, identity(), cov)
    assert np.allclose(f.information, np.linalg.inv(cov))

    g = PoseGraph()
    g.add_pose(identity())
    with pytest.raises(LoopGraphError) as e:
        g.add_prior(1, identity(), EYE)
    assert e.value.kind == ErrorKind.UnknownIndex

    g.add_odometry_factor(0, trans(1.0, 0.0, 0.0), EYE)
    with pytest.raises(LoopGraphError) as e:
        g.add_loop_factor(1, 0, identity(), EYE)
    assert e.value.kind == ErrorKind.InvalidPair
    with pytest.raises(LoopGraphError) as e:
        g.add_loop_factor(0, 5, identity(), EYE)
    assert e.value.kind == ErrorKind.UnknownIndex


def test_dead_reckoning() -> None:
    """Test that odometry factors create poses by composition."""
    g = PoseGraph()
    g.add_pose(identity())
    step = compose(trans(1.0, 0.0, 0.0), rotz(np.pi / 2))
    for i in range(4):
        g.add_odometry_factor(i, step, EYE)
    assert len(g) == 5
    assert np.allclose(g.poses[4].matrix(), np.eye(4), atol=1e-12)
    assert g.count(FactorKind.odometry) == 4
    assert g.count(FactorKind.prior) == 0


def test_gauge_unfixed() -> None:
    """Test that a graph without a prior is refused."""
    g = PoseGraph()
    g.add_pose(identity())
    g.add_odometry_factor(0, trans(1.0, 0.0, 0.0), EYE)
    with pytest.raises(LoopGraphError) as e:
        g.optimize()
    assert e.value.kind == ErrorKind.GaugeUnfixed


@pytest.mark.parametrize("jacobian", ["numeric", "analytic"])
def test_two_priors(jacobian: str) -> None:
    """Test a linear problem with a known least-squares solution."""
    g = PoseGraph()
    g.add_pose(identity())
    g.add_prior(0, identity(), EYE)
    g.add_odometry_factor(0, trans(1.0, 0.0, 0.0), EYE)
    g.add_prior(1, trans(2.0, 0.0, 0.0), EYE)

    report = g.optimize(SolverConfig(jacobian=jacobian))
    assert report.converged
    assert report.final_cost < report.initial_cost
    assert np.allclose(g.poses[0].translation, [1 / 3, 0, 0], atol=1e-6)
    assert np.allclose(g.poses[1].translation, [5 / 3, 0, 0], atol=1e-6)
    assert np.allclose(g.poses[1].rotation, np.eye(3), atol=1e-9)


def test_solver_zero_cost() -> None:
    """Test that a consistent graph is left as is."""
    g = PoseGraph()
    g.add_pose(identity())
    g.add_prior(0, identity(), EYE)
    g.add_odometry_factor(0, trans(1.0, 0.0, 0.0), EYE)
    report = g.optimize()
    assert report.converged
    assert report.iterations <= 1
    assert report.final_cost == pytest.approx(0.0, abs=1e-20)


def test_solver_config() -> None:
    """Test solver setting validation."""
    with pytest.raises(LoopGraphError):
        SolverConfig(jacobian="symbolic")
    with pytest.raises(LoopGraphError):
        SolverConfig(max_iters=0)


def ring_graph(seed: int) -> PoseGraph:
    """Twelve noisy steps around a circle, closed by one loop."""
    rng = np.random.default_rng(seed)
    g = PoseGraph()
    g.add_pose(identity())
    g.add_prior(0, identity(), diag_covariance(1e-3, 1e-3))
    step = compose(trans(1.0, 0.0, 0.0), rotz(2 * np.pi / 12))
    cov = diag_covariance(0.1, 0.01)
    for i in range(11):
        noise = se3_exp_vector(rng.normal(0.0, 0.05, 6))
        g.add_odometry_factor(i, compose(step, noise), cov)
    g.add_loop_factor(0, 11, inverse(step), cov)
    return g


def test_cost_history_decreases() -> None:
    """Test that accepted steps never increase the cost."""
    report = ring_graph(3).optimize()
    history = report.cost_history
    assert all(b <= a for a, b in zip(history[:-1], history[1:]))
    assert report.final_cost < report.initial_cost


def test_solver_deterministic() -> None:
    """Test that the same graph gives bit-identical reports and poses."""
    a, b = ring_graph(4), ring_graph(4)
    ra, rb = a.optimize(), b.optimize()
    assert ra == rb
    for p, q in zip(a.poses, b.poses):
        assert np.array_equal(p.matrix(), q.matrix())


def test_pure_translation_least_squares() -> None:
    """Test a translation-only graph against linear least squares.

    Every measurement lies on the x axis and every rotation is the identity,
    so the loops may disagree with odometry without rotating any pose and
    the SE(3) optimum is the linear one.
    """
    steps = [1.0, 1.2, 0.8, 1.1, 0.9]
    loops = [(0, 3, 2.7), (1, 5, 4.3), (0, 5, 5.2)]
    n = len(steps) + 1

    g = PoseGraph()
    g.add_pose(identity())
    g.add_prior(0, identity(), EYE)
    for i, s in enumerate(steps):
        g.add_odometry_factor(i, trans(s, 0.0, 0.0), EYE)
    for j, k, d in loops:
        g.add_loop_factor(j, k, trans(d, 0.0, 0.0), EYE)
    g.optimize(SolverConfig(cost_tol=1e-15, step_tol=1e-15))

    rows = [np.eye(n)[0]]
    rhs = [0.0]
    for i, s in enumerate(steps):
        rows += [np.eye(n)[i + 1] - np.eye(n)[i]]
        rhs += [s]
    for j, k, d in loops:
        rows += [np.eye(n)[k] - np.eye(n)[j]]
        rhs += [d]
    x = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)[0]

    for p, xi in zip(g.poses, x):
        assert np.allclose(p.translation, [xi, 0.0, 0.0], rtol=0.0, atol=1e-9)
        assert np.allclose(p.rotation, np.eye(3), rtol=0.0, atol=1e-9)


def drifting_graph(
    gt: list[Pose],
    odom: list[Pose],
    loops: list[tuple[int, int, Pose]],
    kernel: Kernel,
) -> PoseGraph:
    """Prior-anchored odometry chain with loop factors."""
    g = PoseGraph()
    g.add_pose(odom[0])
    g.add_prior(0, gt[0], diag_covariance(1e-3, 1e-3))
    for i in range(len(odom) - 1):
        z = between(odom[i], odom[i + 1])
        g.add_odometry_factor(i, z, diag_covariance(0.1, 0.01))
    for j, k, z in loops:
        g.add_loop_factor(j, k, z, diag_covariance(0.3, 0.03), kernel)
    return g


@pytest.mark.slow
def test_spurious_loops() -> None:
    """Test that a robust kernel absorbs false loops."""
    gt = square_loop()
    odom = simulate_odometry(gt, DriftModel(yaw_bias=0.001, z_bias=0.03))
    good = [(i, 150 + i, between(gt[i], gt[150 + i])) for i in range(0, 21)]

    rng = np.random.default_rng(7)
    bad: list[tuple[int, int, Pose]] = []
    while len(bad) < 3:
        j, k = sorted(int(x) for x in rng.integers(0, len(gt), 2))
        if k - j < 10:
            continue
        z = compose(
            trans(*rng.uniform(-10.0, 10.0, 3)), rotz(float(rng.uniform(-1.0, 1.0)))
        )
        bad += [(j, k, z)]

    cauchy = Kernel(KernelKind.cauchy, 1.0)
    results = {}
    for name, loops, kernel in [
        ("clean", good, cauchy),
        ("robust", good + bad, cauchy),
        ("plain", good + bad, Kernel()),
    ]:
        g = drifting_graph(gt, odom, loops, kernel)
        g.optimize()
        results[name] = evaluate_ate(g.poses, gt).rmse

    drift = evaluate_ate(odom, gt).rmse
    assert results["clean"] < drift / 5
    assert results["robust"] <= max(2 * results["clean"], 0.05)
    assert results["plain"] >= 5 * results["clean"]
