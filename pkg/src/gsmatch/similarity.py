"""Dense feature-similarity matrix between two descriptor sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptors import DescriptorSet
from .errors import DimensionMismatch


@dataclass
class SimilarityMatrix:
    """m-by-n cosine scores; rows follow the source set, columns the target."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValueError(f"scores must be 2-D, got shape {self.scores.shape}")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores contain non-finite values")
        if self.scores.size and np.abs(self.scores).max() > 1.0 + 1e-9:
            raise ValueError("cosine scores must lie in [-1, 1]")

    @property
    def m(self):
        return self.scores.shape[0]

    @property
    def n(self):
        return self.scores.shape[1]

    @property
    def shape(self):
        return self.scores.shape


def cosine_similarity_matrix(src: DescriptorSet, tgt: DescriptorSet) -> SimilarityMatrix:
    """Pairwise cosine similarity between the two sets.

    Zero-norm descriptors (e.g. points with empty neighborhoods) get -1
    across their whole row or column so they lose every preference
    comparison downstream.
    """
    if src.dim != tgt.dim:
        raise DimensionMismatch(f"descriptor dims differ: {src.dim} vs {tgt.dim}")
    a = np.asarray(src.vectors, dtype=np.float64)
    b = np.asarray(tgt.vectors, dtype=np.float64)
    norm_a = np.linalg.norm(a, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    zero_a = norm_a == 0.0
    zero_b = norm_b == 0.0
    a = a / np.where(zero_a, 1.0, norm_a)[:, None]
    b = b / np.where(zero_b, 1.0, norm_b)[:, None]
    scores = a @ b.T
    np.clip(scores, -1.0, 1.0, out=scores)
    scores[zero_a, :] = -1.0
    scores[:, zero_b] = -1.0
    return SimilarityMatrix(scores)


def save_similarity_csv(path, sim: SimilarityMatrix):
    """Full-precision row-major CSV dump for debugging."""
    np.savetxt(path, sim.scores, delimiter=",", fmt="%.17g")
