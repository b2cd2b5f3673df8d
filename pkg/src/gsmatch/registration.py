"""Outlier rejection and final transform estimation from correspondences.

RANSAC and a spectral length-consistency baseline, plus the end-to-end
pipeline: descriptors -> similarity -> matching policy -> outlier
rejection -> transform.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .descriptors import DescriptorSet, compute_descriptors, estimate_normals
from .errors import DegenerateInput, EmptyInput, InsufficientCorrespondences
from .geometry import (DEFAULT_INLIER_TAU, PointCloud, RigidTransform,
                       estimate_transform_svd)
from .matching import (POLICY_GS_MATCHING, CorrespondenceSet, GsMatchingParams,
                       match_gale_shapley, match_gs_matching, match_hungarian,
                       match_mutual_nn, match_nearest_neighbor, match_sinkhorn,
                       resolve_policy)
from .similarity import SimilarityMatrix, cosine_similarity_matrix


@dataclass
class RansacParams:
    max_iterations: int = 50000
    sample_size: int = 3
    inlier_tau: float = DEFAULT_INLIER_TAU
    confidence: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.sample_size < 3:
            raise ValueError("sample_size must be >= 3")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.inlier_tau <= 0:
            raise ValueError("inlier_tau must be positive")


@dataclass
class RegistrationResult:
    transform: RigidTransform
    predicted_inliers: CorrespondenceSet
    iterations_used: int
    score: float
    success: bool = True
    timings_ms: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "rotation": [float(v) for v in self.transform.rotation.ravel()],
            "translation": [float(v) for v in self.transform.translation],
            "inliers": [[i, j] for (i, j, _) in self.predicted_inliers.pairs],
            "iterations_used": self.iterations_used,
            "score": self.score,
            "success": self.success,
            "timings_ms": dict(self.timings_ms),
        }


def ransac_register(src: PointCloud, tgt: PointCloud, corr: CorrespondenceSet,
                    params: RansacParams | None = None) -> RegistrationResult:
    """Classic hypothesize-and-verify with a single SVD refit at the end.

    Minimal samples are drawn from a generator seeded by ``params.seed``,
    so results are bitwise reproducible. The loop exits early once the
    confidence bound on having seen an all-inlier sample is met.
    """
    params = params or RansacParams()
    n = len(corr)
    if n < params.sample_size:
        raise InsufficientCorrespondences(
            f"{n} correspondences, need at least {params.sample_size}")
    src_idx = corr.src_indices()
    tgt_idx = corr.tgt_indices()
    p = src.points[src_idx]
    q = tgt.points[tgt_idx]

    rng = np.random.default_rng(params.seed)
    start = time.perf_counter()
    best_count = -1
    best_mask = None
    best_xf = None
    needed = params.max_iterations
    iterations = 0
    while iterations < needed:
        iterations += 1
        sel = rng.choice(n, size=params.sample_size, replace=False)
        try:
            xf = estimate_transform_svd(np.stack([p[sel], q[sel]], axis=1))
        except DegenerateInput:
            continue
        res = np.linalg.norm(p @ xf.rotation.T + xf.translation - q, axis=1)
        mask = res < params.inlier_tau
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask, best_xf = count, mask, xf
            ratio = count / n
            hit = ratio ** params.sample_size
            if hit >= 1.0:
                needed = iterations
            elif hit > 0.0:
                bound = np.ceil(np.log(1.0 - params.confidence) / np.log1p(-hit))
                needed = int(min(params.max_iterations, max(iterations, bound)))
    if best_xf is None:
        raise DegenerateInput("every sampled hypothesis was degenerate")

    # one refit over the best hypothesis' inliers; LS-optimal there, so it
    # never scores worse than the minimal-sample transform on that set
    final_xf = best_xf
    if best_count >= 3:
        inlier_pairs = np.stack([p[best_mask], q[best_mask]], axis=1)
        try:
            final_xf = estimate_transform_svd(inlier_pairs)
        except DegenerateInput:
            final_xf = best_xf
    res = np.linalg.norm(p @ final_xf.rotation.T + final_xf.translation - q, axis=1)
    keep = res < params.inlier_tau
    inliers = replace(corr, pairs=[pr for pr, k in zip(corr.pairs, keep) if k])
    elapsed = (time.perf_counter() - start) * 1000.0
    return RegistrationResult(
        transform=final_xf,
        predicted_inliers=inliers,
        iterations_used=iterations,
        score=float(keep.sum()),
        success=int(keep.sum()) >= 2 * params.sample_size,
        timings_ms={"ransac": elapsed},
        info={"raw_transform": best_xf, "raw_inlier_count": best_count},
    )


def spectral_matching_register(src: PointCloud, tgt: PointCloud,
                               corr: CorrespondenceSet,
                               tau_compat: float = DEFAULT_INLIER_TAU) -> RegistrationResult:
    """Length-consistency spectral baseline.

    Builds the pairwise compatibility matrix
    c_ab = max(0, 1 - (|d_src - d_tgt|)^2 / tau^2), extracts the principal
    eigenvector by power iteration, greedily keeps one-to-one candidates in
    descending eigenvector weight that stay consistent with everything
    already kept, and refits the transform on the kept set.
    """
    n = len(corr)
    if n < 3:
        raise InsufficientCorrespondences(f"{n} correspondences, need at least 3")
    if tau_compat <= 0:
        raise ValueError("tau_compat must be positive")
    start = time.perf_counter()
    p = src.points[corr.src_indices()]
    q = tgt.points[corr.tgt_indices()]
    dp = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=2)
    dq = np.linalg.norm(q[:, None, :] - q[None, :, :], axis=2)
    compat = np.clip(1.0 - (dp - dq) ** 2 / tau_compat ** 2, 0.0, None)
    np.fill_diagonal(compat, 0.0)

    vec = np.full(n, 1.0 / np.sqrt(n))
    iterations = 0
    for iterations in range(1, 10001):
        nxt = compat @ vec
        norm = np.linalg.norm(nxt)
        if norm == 0.0:
            break
        nxt /= norm
        if np.linalg.norm(nxt - vec) < 1e-8:
            vec = nxt
            break
        vec = nxt

    order = np.argsort(-vec, kind="stable")
    selected = []
    used_src = set()
    used_tgt = set()
    for c in order:
        if vec[c] <= 1e-12:
            break
        i, j, _ = corr.pairs[c]
        if i in used_src or j in used_tgt:
            continue
        if selected and (compat[c, selected] <= 0.0).any():
            continue
        selected.append(int(c))
        used_src.add(i)
        used_tgt.add(j)
    if len(selected) < 3:
        raise DegenerateInput("fewer than 3 mutually consistent correspondences")
    selected.sort()

    xf = estimate_transform_svd(np.stack([p[selected], q[selected]], axis=1))
    inliers = replace(corr, pairs=[corr.pairs[c] for c in selected])
    elapsed = (time.perf_counter() - start) * 1000.0
    return RegistrationResult(
        transform=xf,
        predicted_inliers=inliers,
        iterations_used=iterations,
        score=float(vec[selected].sum()),
        success=len(selected) >= 6,
        timings_ms={"spectral": elapsed},
    )


REJECTORS = ("ransac", "spectral")


@dataclass
class PipelineRun:
    """End-to-end result with every intermediate artifact kept inspectable."""

    result: RegistrationResult
    correspondences: CorrespondenceSet
    similarity: SimilarityMatrix
    src_descriptors: DescriptorSet
    tgt_descriptors: DescriptorSet
    src_cloud: PointCloud
    tgt_cloud: PointCloud
    timings_ms: dict


def _match(policy, sim, gs_params, sinkhorn_epsilon, sinkhorn_max_iters, sinkhorn_tol):
    tag = resolve_policy(policy)
    if tag == "nn":
        return match_nearest_neighbor(sim)
    if tag == "mutual_nn":
        return match_mutual_nn(sim)
    if tag == "hungarian":
        return match_hungarian(sim)
    if tag == "sinkhorn":
        return match_sinkhorn(sim, epsilon=sinkhorn_epsilon,
                              max_iters=sinkhorn_max_iters, tol=sinkhorn_tol)
    if tag == "gale_shapley":
        return match_gale_shapley(sim)
    return match_gs_matching(sim, params=gs_params)


def normals_for_matching(cloud: PointCloud, k: int = 20,
                         viewpoint="centroid") -> PointCloud:
    """Estimate normals oriented for cross-cloud matching.

    ``"centroid"`` orients toward the cloud's own centroid, which travels
    with the data, so counterpart points in two poses of the same surface
    get consistently oriented normals; a fixed point like the origin does
    not have that property. Pass a 3-vector for an explicit sensor
    viewpoint, or ``"origin"`` for the plain default.
    """
    if isinstance(viewpoint, str):
        if viewpoint == "centroid":
            viewpoint = cloud.points.mean(axis=0)
        elif viewpoint == "origin":
            viewpoint = (0.0, 0.0, 0.0)
        else:
            raise ValueError(f"unknown viewpoint {viewpoint!r}")
    return estimate_normals(cloud, k=min(k, len(cloud)), viewpoint=viewpoint)


def register_pipeline(src_cloud: PointCloud, tgt_cloud: PointCloud,
                      policy: str = POLICY_GS_MATCHING, rejector: str = "ransac",
                      *, normals_k: int = 20, normals_viewpoint="centroid",
                      descriptor_radius: float = 0.3,
                      descriptor_bins: int = 11,
                      gs_params: GsMatchingParams | None = None,
                      sinkhorn_epsilon: float = 0.001,
                      sinkhorn_max_iters: int = 1000, sinkhorn_tol: float = 1e-6,
                      ransac_params: RansacParams | None = None,
                      sm_tau_compat: float = DEFAULT_INLIER_TAU) -> PipelineRun:
    """Run the full correspondence pipeline on two clouds."""
    if len(src_cloud) == 0 or len(tgt_cloud) == 0:
        raise EmptyInput("both clouds must be nonempty")
    if rejector == "sm":
        rejector = "spectral"
    if rejector not in REJECTORS:
        raise ValueError(f"unknown rejector {rejector!r}; choose from {REJECTORS}")
    timings = {}

    t0 = time.perf_counter()
    if src_cloud.normals is None:
        src_cloud = normals_for_matching(src_cloud, normals_k, normals_viewpoint)
    if tgt_cloud.normals is None:
        tgt_cloud = normals_for_matching(tgt_cloud, normals_k, normals_viewpoint)
    timings["normals"] = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    src_desc = compute_descriptors(src_cloud, radius=descriptor_radius, bins=descriptor_bins)
    tgt_desc = compute_descriptors(tgt_cloud, radius=descriptor_radius, bins=descriptor_bins)
    timings["descriptors"] = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    sim = cosine_similarity_matrix(src_desc, tgt_desc)
    timings["similarity"] = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    corr = _match(policy, sim, gs_params, sinkhorn_epsilon, sinkhorn_max_iters, sinkhorn_tol)
    timings["matching"] = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    if rejector == "ransac":
        result = ransac_register(src_cloud, tgt_cloud, corr, params=ransac_params)
    else:
        result = spectral_matching_register(src_cloud, tgt_cloud, corr,
                                            tau_compat=sm_tau_compat)
    timings["rejection"] = (time.perf_counter() - t0) * 1000.0

    result.timings_ms.update(timings)
    return PipelineRun(
        result=result,
        correspondences=corr,
        similarity=sim,
        src_descriptors=src_desc,
        tgt_descriptors=tgt_desc,
        src_cloud=src_cloud,
        tgt_cloud=tgt_cloud,
        timings_ms=dict(result.timings_ms),
    )
