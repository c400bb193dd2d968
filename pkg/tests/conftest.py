"""Package-wide test configuration."""
# external
from _pytest.config import Config
import numpy as np
import pytest

# loopgraph
from loopgraph.pointcloud import PointCloud
from loopgraph.simulator import canonical_scene, Scene


def pytest_configure(config: Config) -> None:
    """Pytest configuration hook."""
    config.addinivalue_line(
        "markers", "slow: end-to-end runs on the simulated square loop."
    )


@pytest.fixture
def cloud() -> PointCloud:
    """A 200 point random cloud in a 20 m cube."""
    rng = np.random.default_rng(0)
    return PointCloud(rng.uniform(-10.0, 10.0, (200, 3)))


@pytest.fixture(scope="session")
def scene() -> Scene:
    """The canonical square-loop scene."""
    return canonical_scene(seed=0)
