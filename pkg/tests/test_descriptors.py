import struct

import numpy as np
import pytest

from gsmatch.bench import random_transform
from gsmatch.descriptors import (DescriptorSet, compute_descriptors,
                                 estimate_normals, load_descriptors,
                                 save_descriptors)
from gsmatch.errors import FormatError, InsufficientPoints, NormalsRequired
from gsmatch.geometry import PointCloud, apply_transform


def plane_cloud(rng, n=200, z_noise=0.0):
    pts = np.zeros((n, 3))
    pts[:, :2] = rng.uniform(0.0, 1.0, size=(n, 2))
    if z_noise:
        pts[:, 2] = rng.normal(scale=z_noise, size=n)
    return PointCloud(pts)


class TestEstimateNormals:
    def test_planar_cloud_gets_z_normals(self):
        rng = np.random.default_rng(0)
        cloud = estimate_normals(plane_cloud(rng), k=10)
        assert np.abs(np.abs(cloud.normals[:, 2]) - 1.0).max() < 1e-6

    def test_sphere_normals_point_inward(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(300, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        cloud = estimate_normals(PointCloud(pts), k=8)
        dots = np.einsum("ij,ij->i", cloud.normals, -pts)
        assert (dots > 0).all()

    def test_noisy_plane_mostly_within_5_degrees(self):
        rng = np.random.default_rng(2)
        cloud = estimate_normals(plane_cloud(rng, n=400, z_noise=0.003), k=20)
        angles = np.degrees(np.arccos(np.clip(np.abs(cloud.normals[:, 2]), -1, 1)))
        assert np.mean(angles < 5.0) >= 0.95

    def test_too_small_cloud(self):
        with pytest.raises(InsufficientPoints):
            estimate_normals(PointCloud(np.zeros((4, 3))), k=10)

    def test_custom_viewpoint(self):
        rng = np.random.default_rng(3)
        cloud = estimate_normals(plane_cloud(rng), k=10, viewpoint=(0.5, 0.5, 10.0))
        assert (cloud.normals[:, 2] > 0).all()


class TestComputeDescriptors:
    def test_requires_normals(self):
        with pytest.raises(NormalsRequired):
            compute_descriptors(PointCloud(np.zeros((5, 3))))

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(4)
        cloud = estimate_normals(PointCloud(rng.normal(size=(80, 3)) * 0.3), k=8)
        a = compute_descriptors(cloud, radius=0.25, bins=5)
        b = compute_descriptors(cloud, radius=0.25, bins=5)
        assert a.vectors.tobytes() == b.vectors.tobytes()

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(5)
        base = estimate_normals(PointCloud(rng.normal(size=(120, 3)) * 0.3), k=10)
        moved = apply_transform(base, random_transform(rng))
        d0 = compute_descriptors(base, radius=0.25, bins=7)
        d1 = compute_descriptors(moved, radius=0.25, bins=7)
        assert np.linalg.norm(d0.vectors - d1.vectors, axis=1).max() < 1e-6

    def test_isolated_point_zero_vector(self):
        pts = np.vstack([np.random.default_rng(6).normal(size=(20, 3)) * 0.05,
                         [[100.0, 100.0, 100.0]]])
        normals = np.tile([0.0, 0.0, 1.0], (21, 1))
        dset = compute_descriptors(PointCloud(pts, normals), radius=0.3, bins=4)
        assert dset.dim == 12
        np.testing.assert_array_equal(dset.vectors[-1], np.zeros(12))
        assert np.abs(dset.vectors[:-1]).sum() > 0

    def test_blocks_sum_to_one_or_zero(self):
        rng = np.random.default_rng(7)
        cloud = estimate_normals(PointCloud(rng.normal(size=(100, 3)) * 0.3), k=8)
        bins = 9
        dset = compute_descriptors(cloud, radius=0.3, bins=bins)
        assert (dset.vectors >= 0).all()
        for b in range(3):
            block_sums = dset.vectors[:, b * bins:(b + 1) * bins].sum(axis=1)
            assert np.all((np.abs(block_sums - 1.0) < 1e-9) | (block_sums == 0.0))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        cloud = estimate_normals(PointCloud(rng.normal(size=(60, 3)) * 0.3), k=8)
        perm = rng.permutation(60)
        shuffled = PointCloud(cloud.points[perm], cloud.normals[perm])
        d0 = compute_descriptors(cloud, radius=0.3, bins=5)
        d1 = compute_descriptors(shuffled, radius=0.3, bins=5)
        assert np.abs(d1.vectors - d0.vectors[perm]).max() < 1e-12


class TestDescriptorIO:
    def test_binary_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(9)
        path = tmp_path / "d.desc"
        for trial in range(5):
            dset = DescriptorSet.from_array(
                rng.normal(size=(17, 33)).astype(np.float32))
            save_descriptors(dset, path)
            back = load_descriptors(path)
            assert back.dim == 33
            assert back.vectors.tobytes() == dset.vectors.tobytes()

    def test_empty_set_roundtrip(self, tmp_path):
        path = tmp_path / "empty.desc"
        save_descriptors(DescriptorSet(dim=5, vectors=np.empty((0, 5))), path)
        back = load_descriptors(path)
        assert back.dim == 5 and len(back) == 0

    def test_golden_handmade_file(self, tmp_path):
        # 16-byte header (magic, version, count, dim) + 2x3 float32 payload
        path = tmp_path / "golden.desc"
        values = [1.5, -2.0, 0.25, 10.0, 0.0, -0.5]
        blob = b"GSMD" + struct.pack("<III", 1, 2, 3) + struct.pack("<6f", *values)
        path.write_bytes(blob)
        dset = load_descriptors(path)
        np.testing.assert_array_equal(
            dset.vectors, np.array(values, dtype=np.float32).reshape(2, 3))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.desc"
        path.write_bytes(b"NOPE" + struct.pack("<III", 1, 0, 3))
        with pytest.raises(FormatError, match="magic"):
            load_descriptors(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.desc"
        path.write_bytes(b"GSMD" + struct.pack("<III", 1, 4, 3) + b"\x00" * 8)
        with pytest.raises(FormatError, match="byte 16"):
            load_descriptors(path)

    def test_count_dim_mismatch(self, tmp_path):
        path = tmp_path / "extra.desc"
        path.write_bytes(b"GSMD" + struct.pack("<III", 1, 1, 3) + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_descriptors(path)

    def test_csv_roundtrip_values(self, tmp_path):
        rng = np.random.default_rng(10)
        dset = DescriptorSet.from_array(rng.normal(size=(9, 4)))
        path = tmp_path / "d.csv"
        save_descriptors(dset, path)
        back = load_descriptors(path)
        np.testing.assert_array_equal(back.vectors, dset.vectors)
