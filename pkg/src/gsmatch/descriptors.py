"""Per-point feature descriptors.

Provides normal estimation, a handcrafted histogram descriptor over
surface-angle features for synthetic and end-to-end tests, and load/save
of externally computed descriptors (binary ``GSMD`` format or CSV).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import FormatError, InsufficientPoints, NormalsRequired
from .geometry import PointCloud

DESCRIPTOR_MAGIC = b"GSMD"
DESCRIPTOR_VERSION = 1

DEFAULT_RADIUS = 0.3   # meters, indoor scale
DEFAULT_BINS = 11      # per feature block; 33-dim descriptor total


@dataclass
class DescriptorSet:
    """Fixed-dimension feature vectors, one per point of the owning cloud."""

    dim: int
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.vectors.size == 0:
            self.vectors = self.vectors.reshape(0, self.dim)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.dim:
            raise ValueError(
                f"vectors must have shape (count, {self.dim}), got {self.vectors.shape}")
        if not np.isfinite(self.vectors).all():
            raise ValueError("descriptor vectors contain non-finite values")

    def __len__(self):
        return len(self.vectors)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr)
        return cls(dim=arr.shape[1], vectors=arr)


def estimate_normals(cloud: PointCloud, k: int = 20,
                     viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """Per-point normals from the smallest eigenvector of the k-NN covariance.

    Normals are flipped to point toward ``viewpoint`` (the origin by
    default); when a normal is exactly perpendicular to the viewpoint
    direction its sign is left as computed.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    if len(cloud) < k:
        raise InsufficientPoints(f"cloud has {len(cloud)} points, need at least {k}")
    pts = cloud.points
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k)
    neigh = pts[idx]
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0].copy()
    toward = np.asarray(viewpoint, dtype=np.float64) - pts
    flip = np.einsum("ni,ni->n", normals, toward) < 0.0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts.copy(), normals)


def _angle_features(u, d_unit, n_neighbors):
    """Rotation-invariant angular features between a point frame and its
    neighbors: (v.n_q, u.d, atan2(w.n_q, u.n_q)) with v = d x u, w = u x v."""
    v = np.cross(d_unit, u)
    v = v / (np.linalg.norm(v, axis=1, keepdims=True) + 1e-30)
    w = np.cross(u, v)
    alpha = np.einsum("ij,ij->i", v, n_neighbors)
    phi = d_unit @ u
    theta = np.arctan2(np.einsum("ij,ij->i", w, n_neighbors), n_neighbors @ u)
    return alpha, phi, theta


def compute_descriptors(cloud: PointCloud, radius: float = DEFAULT_RADIUS,
                        bins: int = DEFAULT_BINS) -> DescriptorSet:
    """Histogram descriptor over radius neighborhoods.

    Per point, the three angular features against each neighbor are binned
    into ``bins``-wide histograms (one block per feature). Each point's
    blocks are then combined with its neighbors' blocks using 1/distance
    weights and L1-normalized per block. A point with no neighbors inside
    ``radius`` keeps an all-zero descriptor so indices stay aligned with
    the cloud; downstream scoring treats those as never preferred.
    """
    if cloud.normals is None:
        raise NormalsRequired("compute_descriptors needs normals; run estimate_normals first")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    pts = cloud.points
    nrm = cloud.normals
    n = len(pts)
    dim = 3 * bins
    if n == 0:
        return DescriptorSet(dim, np.zeros((0, dim)))

    tree = cKDTree(pts)
    neighbor_lists = tree.query_ball_point(pts, r=radius)
    neighbors = []
    distances = []
    point_hist = np.zeros((n, dim))
    for i in range(n):
        nbrs = np.array([j for j in neighbor_lists[i] if j != i], dtype=int)
        if nbrs.size:
            diff = pts[nbrs] - pts[i]
            dist = np.linalg.norm(diff, axis=1)
            ok = dist > 1e-12   # coincident duplicates carry no direction
            nbrs, diff, dist = nbrs[ok], diff[ok], dist[ok]
        if nbrs.size == 0:
            neighbors.append(nbrs)
            distances.append(np.empty(0))
            continue
        neighbors.append(nbrs)
        distances.append(dist)
        alpha, phi, theta = _angle_features(nrm[i], diff / dist[:, None], nrm[nbrs])
        point_hist[i] = np.concatenate([
            np.histogram(alpha, bins=bins, range=(-1.0, 1.0))[0],
            np.histogram(phi, bins=bins, range=(-1.0, 1.0))[0],
            np.histogram(theta, bins=bins, range=(-np.pi, np.pi))[0],
        ]).astype(np.float64)

    out = np.zeros((n, dim))
    for i in range(n):
        nbrs = neighbors[i]
        if nbrs.size == 0:
            continue
        combined = point_hist[i] + (point_hist[nbrs] / distances[i][:, None]).sum(axis=0) / nbrs.size
        for b in range(3):
            block = combined[b * bins:(b + 1) * bins]
            total = block.sum()
            if total > 0:
                block /= total
        out[i] = combined
    return DescriptorSet(dim, out)


def save_descriptors(dset: DescriptorSet, path, fmt=None):
    """Write descriptors; binary ``GSMD`` layout by default, CSV for ``.csv``.

    Binary layout: magic ``GSMD``, then little-endian u32 version=1, u32
    count, u32 dim, then count*dim float32 values row-major.
    """
    path = str(path)
    if fmt is None:
        fmt = "csv" if path.endswith(".csv") else "binary"
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in dset.vectors:
                writer.writerow(["%.17g" % v for v in row])
        return
    if fmt != "binary":
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "wb") as fh:
        fh.write(DESCRIPTOR_MAGIC)
        fh.write(struct.pack("<III", DESCRIPTOR_VERSION, len(dset), dset.dim))
        fh.write(np.ascontiguousarray(dset.vectors, dtype="<f4").tobytes())


def load_descriptors(path) -> DescriptorSet:
    """Read descriptors written by :func:`save_descriptors`."""
    path = str(path)
    if path.endswith(".csv"):
        rows = []
        with open(path, newline="") as fh:
            for record in csv.reader(fh):
                if record:
                    rows.append([float(v) for v in record])
        if not rows:
            raise FormatError("descriptor CSV is empty; dimension is unrecoverable")
        arr = np.asarray(rows, dtype=np.float64)
        return DescriptorSet(arr.shape[1], arr)

    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise FormatError(f"truncated header: {len(data)} bytes, need 16")
    if data[:4] != DESCRIPTOR_MAGIC:
        raise FormatError(f"bad magic at byte 0: {data[:4]!r}")
    version, count, dim = struct.unpack("<III", data[4:16])
    if version != DESCRIPTOR_VERSION:
        raise FormatError(f"unsupported version {version} at byte 4")
    if dim == 0:
        raise FormatError("dim of 0 at byte 12")
    expected = count * dim * 4
    payload = len(data) - 16
    if payload != expected:
        raise FormatError(
            f"payload of {payload} bytes at byte 16 does not match "
            f"count={count} dim={dim} (expected {expected})")
    vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=16)
    return DescriptorSet(dim, vectors.reshape(count, dim).copy())
