"""Point clouds, rigid transforms, and the alignment error metrics on them.

Internal units are meters and radians throughout; degree/centimeter
conversions happen only at reporting layers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DegenerateInput, InvalidCorrespondence
from .matching import CorrespondenceSet

DEFAULT_INLIER_TAU = 0.10   # meters; indoor scale
OUTDOOR_INLIER_TAU = 0.60   # meters; lidar scale


def _as_points(arr, name="points"):
    pts = np.asarray(arr, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite values")
    return pts


@dataclass
class PointCloud:
    """An ordered set of 3-D points with optional unit normals."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = _as_points(self.points)
        if self.normals is not None:
            self.normals = _as_points(self.normals, "normals")
            if len(self.normals) != len(self.points):
                raise ValueError("normals must match points in length")
            if len(self.normals):
                err = np.abs(np.linalg.norm(self.normals, axis=1) - 1.0).max()
                if err > 1e-6:
                    raise ValueError(f"normals must be unit length (off by {err:.2e})")

    def __len__(self):
        return len(self.points)


@dataclass
class RigidTransform:
    """A proper rotation plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {self.rotation.shape}")
        if not (np.isfinite(self.rotation).all() and np.isfinite(self.translation).all()):
            raise ValueError("transform contains non-finite values")
        ortho = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if ortho > 1e-9:
            raise ValueError(f"rotation is not orthogonal (off by {ortho:.2e})")
        det = np.linalg.det(self.rotation)
        if abs(det - 1.0) > 1e-9:
            raise ValueError(f"rotation must have determinant +1, got {det}")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other):
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self):
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)


def apply_transform(cloud: PointCloud, xf: RigidTransform) -> PointCloud:
    """Rotate and translate every point; normals are only rotated."""
    pts = cloud.points @ xf.rotation.T + xf.translation
    normals = None if cloud.normals is None else cloud.normals @ xf.rotation.T
    return PointCloud(pts, normals)


def _corr_arrays(src, tgt, corr):
    si = corr.src_indices()
    ti = corr.tgt_indices()
    if len(si) == 0:
        return np.empty((0, 3)), np.empty((0, 3))
    if si.min() < 0 or si.max() >= len(src) or ti.min() < 0 or ti.max() >= len(tgt):
        raise InvalidCorrespondence(
            f"correspondence indices out of range for clouds of size "
            f"{len(src)} and {len(tgt)}")
    return src.points[si], tgt.points[ti]


def alignment_error(src: PointCloud, tgt: PointCloud, corr: CorrespondenceSet,
                    xf: RigidTransform) -> float:
    """Sum of squared residuals ||R p + t - q||^2 over the correspondences."""
    p, q = _corr_arrays(src, tgt, corr)
    res = p @ xf.rotation.T + xf.translation - q
    return float(np.sum(res * res))


def inlier_set(src: PointCloud, tgt: PointCloud, corr: CorrespondenceSet,
               xf_gt: RigidTransform, tau: float = DEFAULT_INLIER_TAU) -> CorrespondenceSet:
    """Subset of corr whose residual under xf_gt is strictly below tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    p, q = _corr_arrays(src, tgt, corr)
    res = np.linalg.norm(p @ xf_gt.rotation.T + xf_gt.translation - q, axis=1)
    kept = [pair for pair, r in zip(corr.pairs, res) if r < tau]
    return replace(corr, pairs=kept)


def estimate_transform_svd(pairs) -> RigidTransform:
    """Least-squares rigid transform from (source, target) point pairs.

    Closed form: center both sides, SVD of the cross-covariance, and flip
    the last singular vector if the determinant comes out negative so the
    result is a proper rotation.
    """
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1:] != (2, 3):
        raise ValueError("pairs must be a sequence of (source, target) 3-vectors")
    if len(arr) < 3:
        raise DegenerateInput(f"need at least 3 pairs, got {len(arr)}")
    src = arr[:, 0]
    tgt = arr[:, 1]
    src_mean = src.mean(axis=0)
    tgt_mean = tgt.mean(axis=0)
    h = (src - src_mean).T @ (tgt - tgt_mean)
    u, s, vt = np.linalg.svd(h)
    if s[1] <= max(s[0] * 1e-9, 1e-15):
        raise DegenerateInput("cross-covariance is rank deficient (collinear points?)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = (vt.T * np.array([1.0, 1.0, d])) @ u.T
    translation = tgt_mean - rotation @ src_mean
    return RigidTransform(rotation, translation)


def rotation_error(r_est, r_gt) -> float:
    """Isotropic rotation error in radians.

    Equals arccos((trace(r_est^T r_gt) - 1) / 2) with the argument clamped
    to [-1, 1], but is evaluated as atan2(|sin|, cos) of the relative
    angle: arccos alone has a ~1e-8 noise floor near zero, which would
    drown exact recoveries.
    """
    r_est = np.asarray(r_est, dtype=np.float64)
    r_gt = np.asarray(r_gt, dtype=np.float64)
    rel = r_est.T @ r_gt
    cos_term = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    sin_term = np.linalg.norm(rel - rel.T) / (2.0 * np.sqrt(2.0))
    return float(np.arctan2(sin_term, cos_term))


def translation_error(t_est, t_gt) -> float:
    """L2 distance between the two translations, in meters."""
    t_est = np.asarray(t_est, dtype=np.float64).reshape(3)
    t_gt = np.asarray(t_gt, dtype=np.float64).reshape(3)
    return float(np.linalg.norm(t_est - t_gt))
