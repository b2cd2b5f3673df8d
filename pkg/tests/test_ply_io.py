import numpy as np
import pytest

from gsmatch.errors import FormatError
from gsmatch.geometry import PointCloud
from gsmatch.ply_io import load_ply, save_ply


def random_cloud(rng, n=50, with_normals=False):
    normals = None
    if with_normals:
        normals = rng.normal(size=(n, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(rng.normal(size=(n, 3)), normals)


@pytest.mark.parametrize("fmt", ["ascii", "binary_little_endian"])
@pytest.mark.parametrize("with_normals", [False, True])
def test_roundtrip_bitwise(tmp_path, fmt, with_normals):
    rng = np.random.default_rng(0)
    path = tmp_path / "cloud.ply"
    for trial in range(5):
        cloud = random_cloud(rng, n=30, with_normals=with_normals)
        save_ply(path, cloud, fmt=fmt)
        back = load_ply(path)
        assert back.points.tobytes() == cloud.points.tobytes()
        if with_normals:
            assert back.normals.tobytes() == cloud.normals.tobytes()
        else:
            assert back.normals is None


def test_float32_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    cloud = PointCloud(rng.normal(size=(20, 3)).astype(np.float32))
    path = tmp_path / "f32.ply"
    save_ply(path, cloud, fmt="binary_little_endian", dtype="float")
    back = load_ply(path)
    np.testing.assert_array_equal(back.points, cloud.points)


def test_empty_cloud(tmp_path):
    path = tmp_path / "empty.ply"
    save_ply(path, PointCloud(np.empty((0, 3))))
    assert len(load_ply(path)) == 0


def test_unknown_properties_skipped(tmp_path):
    path = tmp_path / "extra.ply"
    header = (
        "ply\n"
        "format ascii 1.0\n"
        "comment made by hand\n"
        "element vertex 2\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
        "1 2 3 255 0 0\n"
        "4 5 6 0 255 0\n"
    )
    path.write_text(header)
    cloud = load_ply(path)
    np.testing.assert_allclose(cloud.points, [[1, 2, 3], [4, 5, 6]])


def test_binary_with_face_element(tmp_path):
    # vertex data followed by a list-property element that must be ignored
    path = tmp_path / "faces.ply"
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype="<f4")
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        "element vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 1\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    ).encode()
    face = bytes([3]) + np.array([0, 1, 2], dtype="<i4").tobytes()
    path.write_bytes(header + pts.tobytes() + face)
    cloud = load_ply(path)
    np.testing.assert_allclose(cloud.points, pts)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_bytes(b"not a ply file\n")
    with pytest.raises(FormatError, match="magic"):
        load_ply(path)


def test_truncated_binary_payload(tmp_path):
    path = tmp_path / "trunc.ply"
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        "element vertex 4\n"
        "property double x\nproperty double y\nproperty double z\n"
        "end_header\n"
    ).encode()
    path.write_bytes(header + b"\x00" * 10)  # far short of 4*24 bytes
    with pytest.raises(FormatError, match="truncated"):
        load_ply(path)


def test_truncated_ascii_rows(tmp_path):
    path = tmp_path / "trunc.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n1 2 3\n")
    with pytest.raises(FormatError, match="truncated"):
        load_ply(path)


def test_missing_coordinate_property(tmp_path):
    path = tmp_path / "no_z.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property float x\nproperty float y\n"
        "end_header\n1 2\n")
    with pytest.raises(FormatError, match="lacks"):
        load_ply(path)


def test_comments_preserve_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    cloud = random_cloud(rng, n=10)
    path = tmp_path / "c.ply"
    save_ply(path, cloud, comments=["config {\"seed\": 7}"])
    back = load_ply(path)
    assert back.points.tobytes() == cloud.points.tobytes()
