"""Test of g2o pose graph files."""
# std
import os
import tempfile

# external
import numpy as np
import pytest

# loopgraph
from loopgraph import read_g2o, write_g2o
from loopgraph.errors import ErrorKind, LoopGraphError
from loopgraph.geometry import compose, identity, rotz, trans
from loopgraph.posegraph import diag_covariance, FactorKind, Kernel, PoseGraph


def small_graph() -> PoseGraph:
    """Four poses, a prior, odometry and one loop."""
    g = PoseGraph()
    g.add_pose(identity())
    g.add_prior(0, identity(), diag_covariance(1e-3, 1e-3))
    step = compose(trans(2.0, 0.0, 0.1), rotz(np.pi / 2))
    cov = diag_covariance(0.1, 0.01)
    for i in range(3):
        g.add_odometry_factor(i, step, cov)
    loop = compose(trans(0.0, -2.0, 0.0), rotz(-np.pi / 2))
    g.add_loop_factor(0, 3, loop, cov, Kernel.parse("cauchy(1.0)"))
    return g


def test_g2o_roundtrip() -> None:
    """Test that a written graph reads back the same."""
    g = small_graph()
    with tempfile.TemporaryDirectory() as dir:
        path = os.path.join(dir, "graph.g2o")
        write_g2o(path, g)
        with open(path, "r") as f:
            lines = f.read().splitlines()
        back = read_g2o(path, Kernel.parse("cauchy(1.0)"))

    assert sum(1 for line in lines if line.startswith("VERTEX_SE3:QUAT")) == 4
    assert sum(1 for line in lines if line.startswith("EDGE_SE3:QUAT")) == 4
    assert sum(1 for line in lines if line.startswith("EDGE_SE3_PRIOR")) == 1

    assert len(back) == 4
    assert back.count(FactorKind.prior) == 1
    assert back.count(FactorKind.odometry) == 3
    assert back.count(FactorKind.loop) == 1
    for a, b in zip(g.poses, back.poses):
        assert np.allclose(a.matrix(), b.matrix(), atol=1e-12)
    for a, b in zip(g.factors, back.factors):
        assert np.allclose(a.covariance, b.covariance, rtol=1e-9)
        assert np.allclose(a.measurement.matrix(), b.measurement.matrix(), atol=1e-12)
    assert back.factors[-1].robust == Kernel.parse("cauchy(1.0)")
    assert back.cost() == pytest.approx(g.cost(), rel=1e-9, abs=1e-12)


def test_g2o_optimizes() -> None:
    """Test that an imported graph can be solved."""
    g = small_graph()
    with tempfile.TemporaryDirectory() as dir:
        path = os.path.join(dir, "graph.g2o")
        write_g2o(path, g)
        back = read_g2o(path)
    report = back.optimize()
    assert report.final_cost <= report.initial_cost


def test_g2o_errors() -> None:
    """Test malformed g2o files."""
    with tempfile.TemporaryDirectory() as dir:
        path = os.path.join(dir, "bad.g2o")
        with open(path, "w") as f:
            f.write("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n")
            f.write("VERTEX_SE2 1 0 0 0\n")
        with pytest.raises(LoopGraphError) as e:
            read_g2o(path)
        assert e.value.kind == ErrorKind.ParseError
        assert "bad.g2o:2" in str(e.value)

        with open(path, "w") as f:
            f.write("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n")
            f.write("VERTEX_SE3:QUAT 2 0 0 0 0 0 0 1\n")
        with pytest.raises(LoopGraphError) as e:
            read_g2o(path)
        assert e.value.kind == ErrorKind.ParseError

        with pytest.raises(LoopGraphError) as e:
            read_g2o(os.path.join(dir, "missing.g2o"))
        assert e.value.kind == ErrorKind.IoError
