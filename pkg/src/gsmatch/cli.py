"""Command-line frontend.

Subcommands: gen (synthetic pairs), match (correspondences), register
(full pipeline), probe (selection-probability curves), bench (policy
comparison), timing (matching wall-time study). Exit codes: 0 success
(including soft registration failure), 2 usage or input error, 3 internal
error. All outputs embed the resolved configuration and are written
atomically (temp file plus rename).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import traceback

import numpy as np

from . import bench as bench_mod
from .descriptors import compute_descriptors, load_descriptors
from .errors import FileError, FormatError, GsmatchError
from .geometry import (DEFAULT_INLIER_TAU, RigidTransform, rotation_error,
                       translation_error)
from .matching import (ALL_POLICIES, GsMatchingParams, run_policy,
                       resolve_policy)
from .ply_io import load_ply, save_ply
from .probability import (MatchPopulation, ScoreModel, prob_inlier_selected_mc,
                          selection_probability_curve)
from .registration import RansacParams, normals_for_matching, register_pipeline
from .similarity import cosine_similarity_matrix

HUNGARIAN_GUARD_N = 5000

POLICY_CHOICES = ("nn", "mutual", "hungarian", "sinkhorn", "gale-shapley", "gs")


def _atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-gsmatch-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_save_ply(path, cloud, **kwargs):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-gsmatch-")
    os.close(fd)
    try:
        save_ply(tmp, cloud, **kwargs)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, doc):
    _atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def _write_csv(path, header, rows, config):
    lines = ["# config: " + json.dumps(config), ",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _config_of(args, skip=("func",)):
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _parse_sizes(text):
    """Accept '1..50' ranges or comma lists like '1,2,5,10'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in text.split(",") if tok.strip()]


def cmd_gen(args):
    spec = bench_mod.SyntheticPairSpec(
        n_points=args.n, overlap_fraction=args.overlap,
        noise_sigma=args.noise, rotation_max=math.radians(args.rotation_max_deg),
        translation_max=args.translation_max, shape=args.shape, seed=args.seed,
        mesh_path=args.mesh)
    src, tgt, xf, mask = bench_mod.generate_pair(spec)
    config = _config_of(args)
    comment = "config " + json.dumps(config)
    os.makedirs(args.out_dir, exist_ok=True)
    _atomic_save_ply(os.path.join(args.out_dir, "src.ply"), src, comments=[comment])
    _atomic_save_ply(os.path.join(args.out_dir, "tgt.ply"), tgt, comments=[comment])
    _write_json(os.path.join(args.out_dir, "gt.json"), {
        "schema": 1,
        "config": config,
        "rotation": [float(v) for v in xf.rotation.ravel()],
        "translation": [float(v) for v in xf.translation],
        "overlap_indices": np.flatnonzero(mask).tolist(),
    })
    print(f"wrote src.ply tgt.ply gt.json to {args.out_dir} "
          f"({len(src)} points, {int(mask.sum())} in overlap)")
    return 0


def _load_ground_truth(path):
    with open(path) as fh:
        doc = json.load(fh)
    rotation = np.asarray(doc["rotation"], dtype=float).reshape(3, 3)
    translation = np.asarray(doc["translation"], dtype=float)
    return RigidTransform(rotation, translation)


def _clouds_and_similarity(args):
    src = load_ply(args.src)
    tgt = load_ply(args.tgt)
    if args.src_desc and args.tgt_desc:
        src_d = load_descriptors(args.src_desc)
        tgt_d = load_descriptors(args.tgt_desc)
        if len(src_d) != len(src) or len(tgt_d) != len(tgt):
            raise FormatError(
                f"descriptor counts ({len(src_d)}, {len(tgt_d)}) do not match "
                f"cloud sizes ({len(src)}, {len(tgt)})")
    else:
        if src.normals is None:
            src = normals_for_matching(src, args.normals_k)
        if tgt.normals is None:
            tgt = normals_for_matching(tgt, args.normals_k)
        src_d = compute_descriptors(src, radius=args.radius, bins=args.bins)
        tgt_d = compute_descriptors(tgt, radius=args.radius, bins=args.bins)
    return src, tgt, cosine_similarity_matrix(src_d, tgt_d)


def _gs_params(args):
    return GsMatchingParams(
        k_iterations=args.k_iter,
        score_threshold_t1=args.t1,
        noise_count_max_t2=args.t2,
        weight_mode=args.weight_mode)


def cmd_match(args):
    src, tgt, sim = _clouds_and_similarity(args)
    policy = resolve_policy(args.policy)
    if policy == "hungarian" and max(sim.shape) > HUNGARIAN_GUARD_N and not args.force:
        print(f"error: hungarian on {max(sim.shape)} points exceeds the "
              f"{HUNGARIAN_GUARD_N}-point guard; pass --force to override",
              file=sys.stderr)
        return 2
    kwargs = {}
    if policy == "gs_matching":
        kwargs["params"] = _gs_params(args)
    elif policy == "sinkhorn":
        kwargs["epsilon"] = args.epsilon
    corr = run_policy(policy, sim, **kwargs)

    config = _config_of(args)
    doc = corr.to_dict()
    doc["config"] = config
    if args.out.endswith(".csv"):
        _write_csv(args.out, ["src", "tgt", "score"],
                   [(i, j, repr(s)) for (i, j, s) in corr.pairs], config)
    else:
        _write_json(args.out, doc)
    print(f"{len(corr)} pairs ({policy}), {len(corr.pruned_src)} sources pruned")
    if args.gt:
        xf_gt = _load_ground_truth(args.gt)
        ir = bench_mod.inlier_ratio(corr, src, tgt, xf_gt, args.tau)
        nir = bench_mod.non_repetitive_inlier_ratio(corr, src, tgt, xf_gt, args.tau)
        print(f"IR {ir:.4f}  NIR {nir:.4f}")
    return 0


def cmd_register(args):
    src = load_ply(args.src)
    tgt = load_ply(args.tgt)
    ransac = RansacParams(max_iterations=args.max_iterations,
                          inlier_tau=args.tau, seed=args.seed)
    config = _config_of(args)
    try:
        run = register_pipeline(
            src, tgt, policy=args.policy, rejector=args.rejector,
            normals_k=args.normals_k, descriptor_radius=args.radius,
            descriptor_bins=args.bins, gs_params=_gs_params(args),
            ransac_params=ransac, sm_tau_compat=args.tau)
        doc = run.result.to_dict()
        doc["corr_count"] = len(run.correspondences)
        doc["pruned_src"] = list(run.correspondences.pruned_src)
    except GsmatchError as exc:
        # unregistrable input is a soft failure so batch sweeps survive it
        doc = {"success": False, "error": str(exc)}
    doc["schema"] = 1
    doc["config"] = config

    if args.gt and doc.get("success"):
        xf_gt = _load_ground_truth(args.gt)
        rotation = np.asarray(doc["rotation"]).reshape(3, 3)
        re_deg = math.degrees(rotation_error(rotation, xf_gt.rotation))
        te_cm = 100.0 * translation_error(np.asarray(doc["translation"]),
                                          xf_gt.translation)
        doc["re_deg"] = re_deg
        doc["te_cm"] = te_cm
        print(f"RE {re_deg:.3f} deg  TE {te_cm:.3f} cm")
    _write_json(args.out, doc)
    print("success" if doc.get("success") else "registration failed (soft)")
    return 0


def cmd_probe(args):
    model = ScoreModel(args.mu1, args.sigma1, args.mu2, args.sigma2)
    sizes = _parse_sizes(args.sizes)
    rows = selection_probability_curve(model, args.m, sizes,
                                       truncated=args.truncated)
    config = _config_of(args)
    header = ["size", "n", "probability"]
    table = [[r["size"], r["n"], repr(r["probability"])] for r in rows]
    if args.mc_check:
        header.append("mc_probability")
        for row, r in zip(table, rows):
            est = prob_inlier_selected_mc(
                model, MatchPopulation(args.m, r["n"]),
                samples=args.mc_samples, seed=args.seed, truncated=args.truncated)
            row.append(repr(est.probability))
    if args.out.endswith(".json"):
        _write_json(args.out, {"schema": 1, "config": config, "rows": [
            dict(zip(header, [float(v) if isinstance(v, str) else v for v in row]))
            for row in table]})
    else:
        _write_csv(args.out, header, table, config)
    print(f"wrote {len(rows)} curve rows to {args.out}")
    return 0


def cmd_bench(args):
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    for p in policies:
        resolve_policy(p)
    specs = [bench_mod.SyntheticPairSpec(
        n_points=args.n, overlap_fraction=args.overlap, noise_sigma=args.noise,
        shape=args.shape, seed=args.seed + i) for i in range(args.pairs)]
    ransac = RansacParams(max_iterations=args.max_iterations,
                          inlier_tau=args.tau, seed=args.seed)
    report = bench_mod.policy_comparison(
        specs, policies, rejector=args.rejector, tau=args.tau,
        ransac_params=ransac, normals_k=args.normals_k, radius=args.radius,
        bins=args.bins)
    config = _config_of(args)
    os.makedirs(args.out_dir, exist_ok=True)
    report.save_json(os.path.join(args.out_dir, "report.json"), config=config)
    report.save_csv(os.path.join(args.out_dir, "pairs.csv"), config=config)
    for policy, agg in report.aggregate.items():
        print(f"{policy}: RR {agg['rr_percent']:.1f}%  mean IR {agg['mean_ir']:.3f}  "
              f"mean NIR {agg['mean_nir']:.3f}")
    return 0


def cmd_timing(args):
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    for p in policies:
        resolve_policy(p)
    sizes = _parse_sizes(args.sizes)
    rows = bench_mod.timing_study(
        policies, sizes, repeats=args.repeats, seed=args.seed,
        hungarian_max_n=None if args.force else args.hungarian_max_n)
    config = _config_of(args)
    _write_csv(args.out, ["policy", "n", "median_s", "repeats"],
               [[r["policy"], r["n"], repr(r["median_s"]), r["repeats"]] for r in rows],
               config)
    for r in rows:
        print(f"{r['policy']:>14} n={r['n']:<6} median {r['median_s']:.4f}s")
    return 0


def _add_descriptor_flags(parser):
    parser.add_argument("--normals-k", type=int, default=20,
                        help="neighborhood size for normal estimation")
    parser.add_argument("--radius", type=float, default=0.3,
                        help="descriptor neighborhood radius in meters")
    parser.add_argument("--bins", type=int, default=11,
                        help="histogram bins per descriptor feature")


def _add_gs_flags(parser):
    parser.add_argument("--k-iter", type=int, default=3,
                        help="stable-matching iteration count")
    parser.add_argument("--t1", type=float, default=None,
                        help="noise-count score threshold (default: 0.9 quantile)")
    parser.add_argument("--t2", type=int, default=None,
                        help="max noise count before a source is pruned")
    parser.add_argument("--weight-mode", choices=("inverse_count", "reciprocal_rank"),
                        default="inverse_count")


def _overlap(value):
    v = float(value)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"overlap must lie in (0, 1], got {v}")
    return v


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gsmatch",
        description="Correspondence-based point cloud registration toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic registration pair")
    gen.add_argument("--shape", choices=bench_mod.SHAPES, default="box_surface")
    gen.add_argument("--n", type=int, default=2000, help="points per cloud")
    gen.add_argument("--overlap", type=_overlap, default=0.5)
    gen.add_argument("--noise", type=float, default=0.005, help="noise sigma in meters")
    gen.add_argument("--rotation-max-deg", type=float, default=180.0)
    gen.add_argument("--translation-max", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--mesh", default=None, help="PLY mesh for the mesh shape")
    gen.add_argument("--out-dir", default=".")
    gen.set_defaults(func=cmd_gen)

    match = sub.add_parser("match", help="match two clouds into correspondences")
    match.add_argument("src")
    match.add_argument("tgt")
    match.add_argument("--policy", choices=POLICY_CHOICES, default="gs")
    match.add_argument("--src-desc", default=None, help="precomputed source descriptors")
    match.add_argument("--tgt-desc", default=None, help="precomputed target descriptors")
    match.add_argument("--epsilon", type=float, default=0.001,
                       help="sinkhorn entropy regularization")
    match.add_argument("--tau", type=float, default=DEFAULT_INLIER_TAU,
                       help="inlier threshold in meters for IR/NIR")
    match.add_argument("--gt", default=None, help="gt.json for IR/NIR reporting")
    match.add_argument("--force", action="store_true",
                       help="lift the hungarian size guard")
    match.add_argument("--out", default="correspondences.json")
    _add_descriptor_flags(match)
    _add_gs_flags(match)
    match.set_defaults(func=cmd_match)

    reg = sub.add_parser("register", help="run the full registration pipeline")
    reg.add_argument("src")
    reg.add_argument("tgt")
    reg.add_argument("--policy", choices=POLICY_CHOICES, default="gs")
    reg.add_argument("--rejector", choices=("ransac", "sm"), default="ransac")
    reg.add_argument("--tau", type=float, default=DEFAULT_INLIER_TAU)
    reg.add_argument("--max-iterations", type=int, default=50000)
    reg.add_argument("--seed", type=int, default=0)
    reg.add_argument("--gt", default=None, help="gt.json to report RE/TE against")
    reg.add_argument("--out", default="registration.json")
    _add_descriptor_flags(reg)
    _add_gs_flags(reg)
    reg.set_defaults(func=cmd_register)

    probe = sub.add_parser("probe", help="selection-probability curves")
    probe.add_argument("--m", type=int, default=10, help="inlier count")
    probe.add_argument("--sizes", default="1..50",
                       help="outlier multipliers, e.g. 1..50 or 1,2,4")
    probe.add_argument("--mu1", type=float, default=0.9, help="inlier score mean")
    probe.add_argument("--sigma1", type=float, default=0.1)
    probe.add_argument("--mu2", type=float, default=0.6, help="outlier score mean")
    probe.add_argument("--sigma2", type=float, default=0.15)
    probe.add_argument("--truncated", action="store_true",
                       help="truncate score models to [-1, 1]")
    probe.add_argument("--mc-check", action="store_true",
                       help="append a Monte Carlo column")
    probe.add_argument("--mc-samples", type=int, default=200000)
    probe.add_argument("--seed", type=int, default=0)
    probe.add_argument("--out", default="curve.csv")
    probe.set_defaults(func=cmd_probe)

    bench = sub.add_parser("bench", help="policy comparison on synthetic pairs")
    bench.add_argument("--pairs", type=int, default=50)
    bench.add_argument("--n", type=int, default=400, help="points per cloud")
    bench.add_argument("--overlap", type=_overlap, default=0.3)
    bench.add_argument("--noise", type=float, default=0.01)
    bench.add_argument("--shape", choices=bench_mod.SHAPES, default="box_surface")
    bench.add_argument("--policies", default="nn,gs",
                       help="comma list from: " + ",".join(ALL_POLICIES))
    bench.add_argument("--rejector", choices=("ransac", "sm"), default="ransac")
    bench.add_argument("--tau", type=float, default=DEFAULT_INLIER_TAU)
    bench.add_argument("--max-iterations", type=int, default=2000)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out-dir", default="bench_out")
    _add_descriptor_flags(bench)
    bench.set_defaults(func=cmd_bench)

    timing = sub.add_parser("timing", help="matching wall-time study")
    timing.add_argument("--policies", default="nn,gs")
    timing.add_argument("--sizes", default="1000,2000,4000")
    timing.add_argument("--repeats", type=int, default=5)
    timing.add_argument("--seed", type=int, default=0)
    timing.add_argument("--hungarian-max-n", type=int, default=2000)
    timing.add_argument("--force", action="store_true",
                        help="lift the hungarian size guard")
    timing.add_argument("--out", default="timing.csv")
    timing.set_defaults(func=cmd_timing)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, FileError, FileNotFoundError, IsADirectoryError,
            PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
