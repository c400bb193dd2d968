"""Test of point clouds, voxel downsampling and cloud files."""
# std
import os
import tempfile

# external
import numpy as np
import pytest

# loopgraph
from loopgraph.errors import ErrorKind, LoopGraphError
from loopgraph.geometry import compose, inverse, rotz, trans
from loopgraph.pointcloud import (
    CloudFormat,
    concatenate,
    decode_cloud,
    encode_cloud,
    flatten_z,
    PointCloud,
    read_cloud,
    transform_cloud,
    voxel_downsample,
    write_cloud,
)


def test_non_finite_rows_dropped() -> None:
    """Test that NaN and Inf rows are removed and counted."""
    c = PointCloud(
        np.array([[0.0, 0.0, 0.0], [np.nan, 1.0, 1.0], [1.0, np.inf, 0.0]]),
        np.array([1.0, 2.0, 3.0]),
    )
    assert len(c) == 1
    assert c.dropped == 2
    assert np.allclose(c.intensity, [1.0])


def test_intensity_shape() -> None:
    """Test that intensities must match points."""
    with pytest.raises(LoopGraphError) as e:
        PointCloud(np.zeros((3, 3)), np.zeros(2))
    assert e.value.kind == ErrorKind.ShapeMismatch


def test_voxel_centroid() -> None:
    """Test that points of a voxel merge into their centroid."""
    c = PointCloud(np.array([[0.0, 0.0, 0.0], [0.4, 0.0, 0.0]]))
    out = voxel_downsample(c, 1.0)
    assert len(out) == 1
    assert np.allclose(out.points, [[0.2, 0.0, 0.0]])


def test_voxel_identical_points() -> None:
    """Test that copies of a point give that point."""
    c = PointCloud(np.ones((10, 3)))
    out = voxel_downsample(c, 0.5)
    assert len(out) == 1
    assert np.allclose(out.points, [[1.0, 1.0, 1.0]])


def test_voxel_empty() -> None:
    """Test that an empty cloud stays empty."""
    assert len(voxel_downsample(PointCloud.empty(), 0.5)) == 0


@pytest.mark.parametrize("leaf", [0.0, -1.0])
def test_voxel_invalid_leaf(leaf: float) -> None:
    """Test that the leaf must be positive."""
    with pytest.raises(LoopGraphError) as e:
        voxel_downsample(PointCloud(np.zeros((1, 3))), leaf)
    assert e.value.kind == ErrorKind.InvalidLeaf


def test_voxel_order_independent(cloud: PointCloud) -> None:
    """Test that the output does not depend on the input order."""
    rng = np.random.default_rng(1)
    shuffled = PointCloud(cloud.points[rng.permutation(len(cloud))])
    a = voxel_downsample(cloud, 3.0)
    b = voxel_downsample(shuffled, 3.0)
    assert len(a) < len(cloud)
    assert np.allclose(a.points, b.points)


def test_voxel_one_point_per_voxel(cloud: PointCloud) -> None:
    """Test that no two output points share a voxel."""
    out = voxel_downsample(cloud, 2.5)
    keys = np.floor(out.points / 2.5)
    assert len(np.unique(keys, axis=0)) == len(out)


def test_voxel_intensity() -> None:
    """Test that intensities are averaged."""
    c = PointCloud(np.zeros((2, 3)), np.array([1.0, 3.0]))
    assert np.allclose(voxel_downsample(c, 1.0).intensity, [2.0])


def test_transform_cloud(cloud: PointCloud) -> None:
    """Test that transforming back and forth is the identity."""
    p = compose(trans(1.0, -2.0, 0.5), rotz(0.3))
    back = transform_cloud(inverse(p), transform_cloud(p, cloud))
    assert np.allclose(back.points, cloud.points)


def test_concatenate() -> None:
    """Test cloud union."""
    a = PointCloud(np.zeros((2, 3)), np.ones(2))
    b = PointCloud(np.ones((3, 3)))
    assert len(concatenate([a, b])) == 5
    assert concatenate([a, b]).intensity is None
    assert concatenate([a, a]).intensity is not None
    assert len(concatenate([])) == 0


def test_flatten_z(cloud: PointCloud) -> None:
    """Test that z is zeroed."""
    flat = flatten_z(cloud)
    assert np.all(flat.points[:, 2] == 0.0)
    assert np.allclose(flat.points[:, :2], cloud.points[:, :2])


@pytest.mark.parametrize("fmt", list(CloudFormat))
@pytest.mark.parametrize("with_intensity", [False, True])
def test_encode_decode(fmt: CloudFormat, with_intensity: bool) -> None:
    """Test serialization of clouds."""
    rng = np.random.default_rng(2)
    pts = rng.normal(0.0, 10.0, (50, 3))
    c = PointCloud(pts, rng.uniform(0, 1, 50) if with_intensity else None)
    back = decode_cloud(encode_cloud(c, fmt), fmt)
    assert np.array_equal(back.points, c.points)
    if with_intensity:
        assert np.array_equal(back.intensity, c.intensity)
    else:
        assert back.intensity is None


def test_write_read(cloud: PointCloud) -> None:
    """Test that the extension selects the format."""
    with tempfile.TemporaryDirectory() as dir:
        for name in ["scan.pcd", "scan.ply"]:
            path = os.path.join(dir, name)
            write_cloud(path, cloud)
            assert np.array_equal(read_cloud(path).points, cloud.points)

        with pytest.raises(LoopGraphError) as e:
            write_cloud(os.path.join(dir, "scan.xyz"), cloud)
        assert e.value.kind == ErrorKind.UnsupportedFieldLayout

        with pytest.raises(LoopGraphError) as e:
            read_cloud(os.path.join(dir, "missing.pcd"))
        assert e.value.kind == ErrorKind.IoError


def test_pcd_float32() -> None:
    """Test reading a binary PCD of 4 byte floats."""
    header = (
        "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n"
        + "WIDTH 2\nHEIGHT 1\nPOINTS 2\nDATA binary\n"
    )
    body = np.array([[1, 2, 3], [4, 5, 6]], dtype="<f4").tobytes()
    c = decode_cloud(header.encode() + body, CloudFormat.pcd_binary)
    assert np.allclose(c.points, [[1, 2, 3], [4, 5, 6]])


def test_pcd_ascii_nan() -> None:
    """Test that non-finite ascii rows are dropped."""
    text = (
        "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nPOINTS 2\nDATA ascii\n"
        + "1 2 3\nnan 0 0\n"
    )
    c = decode_cloud(text.encode(), CloudFormat.pcd_ascii)
    assert len(c) == 1
    assert c.dropped == 1


def test_pcd_unsupported_fields() -> None:
    """Test that unknown field layouts are refused."""
    text = "FIELDS x y z rgb\nSIZE 4 4 4 4\nTYPE F F F F\nPOINTS 0\nDATA ascii\n"
    with pytest.raises(LoopGraphError) as e:
        decode_cloud(text.encode(), CloudFormat.pcd_ascii)
    assert e.value.kind == ErrorKind.UnsupportedFieldLayout

    text = "FIELDS x y z\nSIZE 4 4 4\nTYPE U U U\nPOINTS 0\nDATA ascii\n"
    with pytest.raises(LoopGraphError) as e:
        decode_cloud(text.encode(), CloudFormat.pcd_ascii)
    assert e.value.kind == ErrorKind.UnsupportedFieldLayout


def test_pcd_parse_errors() -> None:
    """Test malformed PCD files."""
    # no DATA line
    with pytest.raises(LoopGraphError) as e:
        decode_cloud(b"FIELDS x y z\n", CloudFormat.pcd_ascii, "a.pcd")
    assert e.value.kind == ErrorKind.ParseError

    # bad value on the second data line
    text = (
        "FIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nPOINTS 2\nDATA ascii\n"
        + "1 2 3\n1 b 3\n"
    )
    with pytest.raises(LoopGraphError) as e:
        decode_cloud(text.encode(), CloudFormat.pcd_ascii, "a.pcd")
    assert e.value.kind == ErrorKind.ParseError
    assert "a.pcd:7" in str(e.value)

    # truncated binary data
    text = "FIELDS x y z\nSIZE 8 8 8\nTYPE F F F\nPOINTS 2\nDATA binary\n"
    with pytest.raises(LoopGraphError) as e:
        decode_cloud(text.encode() + b"\x00" * 8, CloudFormat.pcd_binary)
    assert e.value.kind == ErrorKind.ParseError


def test_ply_errors() -> None:
    """Test malformed PLY files."""
    with pytest.raises(LoopGraphError) as e:
        decode_cloud(b"not a ply\n", CloudFormat.ply)
    assert e.value.kind == ErrorKind.ParseError

    text = "ply\nformat binary_little_endian 1.0\nend_header\n"
    with pytest.raises(LoopGraphError) as e:
        decode_cloud(text.encode(), CloudFormat.ply)
    assert e.value.kind == ErrorKind.UnsupportedFieldLayout


@pytest.mark.parametrize("count", ["abc", "1.5", "-2"])
def test_ply_bad_vertex_count(count: str) -> None:
    """Test that a bad vertex count is a parse error naming the line."""
    text = f"ply\nformat ascii 1.0\nelement vertex {count}\nend_header\n"
    with pytest.raises(LoopGraphError) as e:
        decode_cloud(text.encode(), CloudFormat.ply, "bad.ply")
    assert e.value.kind == ErrorKind.ParseError
    assert "bad.ply:3" in str(e.value)
