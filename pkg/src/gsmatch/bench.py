"""Synthetic benchmark harness: pair generation with ground truth, the
evaluation metrics (registration recall, rotation/translation error,
inlier rate, non-repetitive inlier rate), timing studies, and
policy-comparison reports.
"""

from __future__ import annotations

import json
import math
import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .descriptors import compute_descriptors
from .errors import FileError, GsmatchError
from .geometry import (DEFAULT_INLIER_TAU, PointCloud, RigidTransform,
                       apply_transform, inlier_set, rotation_error,
                       translation_error)
from .matching import GsMatchingParams, run_policy
from .registration import (RansacParams, normals_for_matching,
                           ransac_register, spectral_matching_register)
from .similarity import cosine_similarity_matrix

SHAPES = ("box_surface", "sphere", "multi_plane", "bunny_like_mesh_file")

RECALL_RE_DEG = 15.0   # indoor thresholds
RECALL_TE_CM = 30.0


@dataclass
class SyntheticPairSpec:
    n_points: int = 500
    overlap_fraction: float = 0.5
    noise_sigma: float = 0.005
    rotation_max: float = math.pi
    translation_max: float = 1.0
    shape: str = "box_surface"
    seed: int = 0
    mesh_path: str | None = None

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be positive")
        if not 0.0 < self.overlap_fraction <= 1.0:
            raise ValueError("overlap_fraction must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; choose from {SHAPES}")


def _sample_box_surface(n, rng):
    # unit cube centered at the origin; faces picked uniformly
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    for a in range(3):
        sel = axis == a
        others = [b for b in range(3) if b != a]
        pts[sel, a] = sign[sel]
        pts[sel, others[0]] = uv[sel, 0]
        pts[sel, others[1]] = uv[sel, 1]
    return pts


def _sample_sphere(n, rng, radius=0.5):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius


_PLANE_FRAMES = (
    (np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
    (np.array([0.0, 0.0, 0.5]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])),
    (np.array([0.5, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])),
)


def _sample_multi_plane(n, rng):
    which = rng.integers(0, len(_PLANE_FRAMES), size=n)
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.empty((n, 3))
    for k, (origin, e1, e2) in enumerate(_PLANE_FRAMES):
        sel = which == k
        pts[sel] = origin + uv[sel, 0:1] * e1 + uv[sel, 1:2] * e2
    return pts


def _sample_mesh_vertices(spec, rng):
    from .ply_io import load_ply

    if spec.mesh_path is None or not os.path.exists(spec.mesh_path):
        raise FileError(f"mesh file not found: {spec.mesh_path!r}")
    verts = load_ply(spec.mesh_path).points
    if len(verts) == 0:
        raise FileError(f"mesh file has no vertices: {spec.mesh_path!r}")
    replace = len(verts) < spec.n_points
    idx = rng.choice(len(verts), size=spec.n_points, replace=replace)
    return verts[idx]


def _sample_shape(spec, rng, n=None):
    n = spec.n_points if n is None else n
    if spec.shape == "box_surface":
        return _sample_box_surface(n, rng)
    if spec.shape == "sphere":
        return _sample_sphere(n, rng)
    if spec.shape == "multi_plane":
        return _sample_multi_plane(n, rng)
    return _sample_mesh_vertices(spec, rng)


def _rotation_about(axis, angle):
    axis = axis / np.linalg.norm(axis)
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def random_transform(rng, rotation_max=math.pi, translation_max=1.0) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, rotation_max) if rotation_max > 0 else 0.0
    t = rng.uniform(-translation_max, translation_max, size=3) \
        if translation_max > 0 else np.zeros(3)
    return RigidTransform(_rotation_about(axis, angle), t)


def generate_pair(spec: SyntheticPairSpec):
    """Build a (source, target, ground-truth transform, overlap mask) tuple.

    The target is the source cropped to ``overlap_fraction`` along a random
    direction, padded with fresh clutter from the non-overlap side, moved
    by the ground-truth transform, and perturbed with Gaussian noise.
    ``overlap_mask[i]`` is True iff source point i has a counterpart; the
    counterparts occupy the first ``mask.sum()`` target slots in source
    index order. Fully deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    pts = _sample_shape(spec, rng)
    xf = random_transform(rng, spec.rotation_max, spec.translation_max)

    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    proj = pts @ direction
    if spec.overlap_fraction >= 1.0:
        mask = np.ones(spec.n_points, dtype=bool)
    else:
        cut = np.quantile(proj, spec.overlap_fraction)
        mask = proj <= cut
        if not mask.any():
            mask[np.argmin(proj)] = True

    overlap_pts = pts[mask]
    n_clutter = spec.n_points - len(overlap_pts)
    clutter = np.empty((0, 3))
    if n_clutter > 0:
        cut = proj[mask].max()
        chunks = []
        got = 0
        while got < n_clutter:
            cand = _sample_shape(spec, rng, n=max(n_clutter, 64))
            keep = cand[cand @ direction > cut]
            chunks.append(keep)
            got += len(keep)
        clutter = np.vstack(chunks)[:n_clutter]

    tgt_pts = np.vstack([overlap_pts, clutter]) @ xf.rotation.T + xf.translation
    if spec.noise_sigma > 0:
        tgt_pts = tgt_pts + rng.normal(0.0, spec.noise_sigma, size=tgt_pts.shape)
    return PointCloud(pts), PointCloud(tgt_pts), xf, mask


def inlier_ratio(corr, src, tgt, xf_gt, tau=DEFAULT_INLIER_TAU) -> float:
    """Fraction of correspondences whose residual under the ground truth
    falls below tau."""
    if len(corr) == 0:
        return 0.0
    return len(inlier_set(src, tgt, corr, xf_gt, tau)) / len(corr)


def non_repetitive_inlier_ratio(corr, src, tgt, xf_gt, tau=DEFAULT_INLIER_TAU) -> float:
    """Like inlier_ratio, but the numerator only counts inliers whose source
    and target indices each appear exactly once in the whole set. Returns
    0.0 for an empty set (the ratio is undefined there)."""
    if len(corr) == 0:
        return 0.0
    src_mult = Counter(i for (i, _, _) in corr.pairs)
    tgt_mult = Counter(j for (_, j, _) in corr.pairs)
    inliers = inlier_set(src, tgt, corr, xf_gt, tau)
    unique = sum(1 for (i, j, _) in inliers.pairs
                 if src_mult[i] == 1 and tgt_mult[j] == 1)
    return unique / len(corr)


def registration_recall(records, re_thresh_deg=RECALL_RE_DEG,
                        te_thresh_cm=RECALL_TE_CM) -> float:
    """Percentage of records with RE and TE strictly below the thresholds."""
    if not records:
        return 0.0
    hits = sum(1 for r in records
               if r.get("re_deg", math.inf) < re_thresh_deg
               and r.get("te_cm", math.inf) < te_thresh_cm)
    return 100.0 * hits / len(records)


def worker_count(default=1):
    """Parallelism cap from the GSM_THREADS environment variable."""
    raw = os.environ.get("GSM_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


@dataclass
class EvalReport:
    records: list
    aggregate: dict
    schema: int = 1

    def to_dict(self):
        return {"schema": self.schema, "aggregate": self.aggregate,
                "records": self.records}

    def save_json(self, path, config=None):
        doc = self.to_dict()
        if config is not None:
            doc["config"] = config
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)

    def save_csv(self, path, config=None):
        cols = ["pair", "policy", "corr_count", "pruned", "ir", "nir",
                "re_deg", "te_cm", "success", "match_ms", "reject_ms"]
        with open(path, "w") as fh:
            if config is not None:
                fh.write("# config: " + json.dumps(config) + "\n")
            fh.write(",".join(cols) + "\n")
            for r in self.records:
                fh.write(",".join(str(r.get(c, "")) for c in cols) + "\n")


def _evaluate_pair(pair_id, spec, policies, rejector, tau, ransac_params,
                   gs_params, normals_k, radius, bins):
    src, tgt, xf_gt, _ = generate_pair(spec)
    src_n = normals_for_matching(src, normals_k)
    tgt_n = normals_for_matching(tgt, normals_k)
    sim = cosine_similarity_matrix(
        compute_descriptors(src_n, radius=radius, bins=bins),
        compute_descriptors(tgt_n, radius=radius, bins=bins))

    records = []
    for policy in policies:
        t0 = time.perf_counter()
        kwargs = {"params": gs_params} if policy in ("gs", "gs_matching") and gs_params else {}
        corr = run_policy(policy, sim, **kwargs)
        match_ms = (time.perf_counter() - t0) * 1000.0

        record = {
            "pair": pair_id,
            "policy": policy,
            "corr_count": len(corr),
            "pruned": len(corr.pruned_src),
            "ir": inlier_ratio(corr, src_n, tgt_n, xf_gt, tau),
            "nir": non_repetitive_inlier_ratio(corr, src_n, tgt_n, xf_gt, tau),
            "match_ms": match_ms,
        }
        t0 = time.perf_counter()
        try:
            if rejector == "ransac":
                params = ransac_params or RansacParams()
                params = RansacParams(
                    max_iterations=params.max_iterations,
                    sample_size=params.sample_size,
                    inlier_tau=params.inlier_tau,
                    confidence=params.confidence,
                    seed=params.seed + pair_id,
                )
                result = ransac_register(src_n, tgt_n, corr, params=params)
            else:
                result = spectral_matching_register(src_n, tgt_n, corr, tau_compat=tau)
            record["re_deg"] = math.degrees(
                rotation_error(result.transform.rotation, xf_gt.rotation))
            record["te_cm"] = 100.0 * translation_error(
                result.transform.translation, xf_gt.translation)
            record["success"] = result.success
        except GsmatchError:
            record["re_deg"] = math.inf
            record["te_cm"] = math.inf
            record["success"] = False
        record["reject_ms"] = (time.perf_counter() - t0) * 1000.0
        records.append(record)
    return records


def policy_comparison(spec_set, policies, rejector="ransac",
                      tau=DEFAULT_INLIER_TAU, ransac_params=None,
                      gs_params: GsMatchingParams | None = None,
                      normals_k=20, radius=0.3, bins=11) -> EvalReport:
    """Evaluate each policy on each synthetic pair; aggregates per policy.

    Pairs are independent; GSM_THREADS > 1 evaluates them in a thread pool
    and the report is sorted by (pair, policy) either way.
    """
    jobs = [(i, spec) for i, spec in enumerate(spec_set)]
    threads = worker_count()

    def run(job):
        return _evaluate_pair(job[0], job[1], policies, rejector, tau,
                              ransac_params, gs_params, normals_k, radius, bins)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, jobs))
    else:
        chunks = [run(job) for job in jobs]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r["pair"], r["policy"]))

    aggregate = {}
    for policy in policies:
        rows = [r for r in records if r["policy"] == policy]
        recalled = [r for r in rows if r["re_deg"] < RECALL_RE_DEG
                    and r["te_cm"] < RECALL_TE_CM]
        aggregate[policy] = {
            "rr_percent": registration_recall(rows),
            "mean_re_deg": float(np.mean([r["re_deg"] for r in recalled])) if recalled else None,
            "mean_te_cm": float(np.mean([r["te_cm"] for r in recalled])) if recalled else None,
            "mean_ir": float(np.mean([r["ir"] for r in rows])),
            "mean_nir": float(np.mean([r["nir"] for r in rows])),
            "mean_corr_count": float(np.mean([r["corr_count"] for r in rows])),
            "median_match_ms": float(np.median([r["match_ms"] for r in rows])),
            "median_reject_ms": float(np.median([r["reject_ms"] for r in rows])),
        }
    return EvalReport(records=records, aggregate=aggregate)


def timing_study(policies, sizes, repeats=5, seed=0, hungarian_max_n=2000,
                 gs_params: GsMatchingParams | None = None):
    """Median matching wall time per (policy, n) on random score matrices.

    The Hungarian solver is skipped above ``hungarian_max_n`` (cubic cost);
    pass None to lift the guard.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        mats = [rng.uniform(-1.0, 1.0, size=(n, n)) for _ in range(repeats)]
        for policy in policies:
            if (policy == "hungarian" and hungarian_max_n is not None
                    and n > hungarian_max_n):
                continue
            kwargs = {"params": gs_params} if policy in ("gs", "gs_matching") and gs_params else {}
            times = []
            for mat in mats:
                t0 = time.perf_counter()
                run_policy(policy, mat, **kwargs)
                times.append(time.perf_counter() - t0)
            rows.append({"policy": policy, "n": int(n),
                         "median_s": float(np.median(times)),
                         "repeats": repeats})
    return rows
