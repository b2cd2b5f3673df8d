"""Matching policies that turn a score matrix into a correspondence set.

Six policies are provided: nearest neighbor, mutual nearest neighbor,
optimal assignment (Hungarian), entropic-relaxation assignment (Sinkhorn
plus mutual maximum), classic Gale-Shapley deferred acceptance, and the
noise-count-weighted iterative stable matching with a nearest-neighbor
fallback ("gs_matching").
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyInput

POLICY_NN = "nn"
POLICY_MUTUAL = "mutual_nn"
POLICY_HUNGARIAN = "hungarian"
POLICY_SINKHORN = "sinkhorn"
POLICY_GALE_SHAPLEY = "gale_shapley"
POLICY_GS_MATCHING = "gs_matching"

ALL_POLICIES = (
    POLICY_NN,
    POLICY_MUTUAL,
    POLICY_HUNGARIAN,
    POLICY_SINKHORN,
    POLICY_GALE_SHAPLEY,
    POLICY_GS_MATCHING,
)

# Quantile of all score entries used when no explicit binarization
# threshold is configured; adapts to the score range of the descriptor.
DEFAULT_T1_QUANTILE = 0.9

WEIGHT_MODES = ("inverse_count", "reciprocal_rank")


@dataclass
class CorrespondenceSet:
    """A list of (source index, target index, score) triples.

    ``pruned_src`` records source indices that were discarded before
    matching and therefore appear in no pair. ``info`` carries per-policy
    diagnostics (iteration counts, resolved parameters, ...) and is not
    serialized.
    """

    pairs: list
    policy: str = "unknown"
    pruned_src: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pairs = [(int(i), int(j), float(s)) for (i, j, s) in self.pairs]
        seen = set()
        for (i, j, _) in self.pairs:
            if (i, j) in seen:
                raise ValueError(f"duplicate correspondence ({i}, {j})")
            seen.add((i, j))

    def __len__(self):
        return len(self.pairs)

    def src_indices(self):
        return np.array([p[0] for p in self.pairs], dtype=int)

    def tgt_indices(self):
        return np.array([p[1] for p in self.pairs], dtype=int)

    def scores(self):
        return np.array([p[2] for p in self.pairs], dtype=float)

    def to_dict(self):
        return {
            "pairs": [{"src": i, "tgt": j, "score": s} for (i, j, s) in self.pairs],
            "policy": self.policy,
            "pruned_src": list(self.pruned_src),
        }

    @classmethod
    def from_dict(cls, data):
        pairs = [(p["src"], p["tgt"], p["score"]) for p in data["pairs"]]
        return cls(pairs, policy=data.get("policy", "unknown"),
                   pruned_src=list(data.get("pruned_src", [])))


@dataclass
class GsMatchingParams:
    """Knobs for the weighted stable-matching policy.

    ``score_threshold_t1`` of None resolves to the 0.9 quantile of the
    score matrix; ``noise_count_max_t2`` of None resolves to
    max(10, 0.05 * n_targets).
    """

    k_iterations: int = 3
    score_threshold_t1: float | None = None
    noise_count_max_t2: int | None = None
    weight_mode: str = "inverse_count"

    def __post_init__(self):
        if self.k_iterations < 1:
            raise ValueError("k_iterations must be >= 1")
        if self.noise_count_max_t2 is not None and self.noise_count_max_t2 < 1:
            raise ValueError("noise_count_max_t2 must be >= 1")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")


def _scores(S):
    """Accept either a SimilarityMatrix-like object or a raw 2-D array."""
    mat = np.asarray(getattr(S, "scores", S), dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError(f"score matrix must be 2-D, got shape {mat.shape}")
    return mat


def _require_nonempty(mat):
    if mat.shape[0] == 0 or mat.shape[1] == 0:
        raise EmptyInput(f"score matrix is empty: shape {mat.shape}")


def _pairs_with_scores(mat, index_pairs):
    return [(int(i), int(j), float(mat[i, j])) for (i, j) in index_pairs]


def match_nearest_neighbor(S):
    """One pair per source row at the row argmax; many-to-one is allowed."""
    mat = _scores(S)
    _require_nonempty(mat)
    best = np.argmax(mat, axis=1)
    pairs = _pairs_with_scores(mat, enumerate(best))
    return CorrespondenceSet(pairs, policy=POLICY_NN)


def _mutual_index_pairs(mat):
    row_best = np.argmax(mat, axis=1)
    col_best = np.argmax(mat, axis=0)
    rows = np.arange(mat.shape[0])
    keep = rows[col_best[row_best] == rows]
    return [(int(i), int(row_best[i])) for i in keep]


def match_mutual_nn(S):
    """Keep (i, j) only when each is the other's argmax; strictly one-to-one."""
    mat = _scores(S)
    _require_nonempty(mat)
    pairs = _pairs_with_scores(mat, _mutual_index_pairs(mat))
    return CorrespondenceSet(pairs, policy=POLICY_MUTUAL)


def match_hungarian(S):
    """Optimal one-to-one assignment maximizing the total score.

    Rectangular inputs are padded to square with -2 (below the cosine
    floor of -1) so padded cells can never displace a real entry; pairs
    touching padding are dropped from the output.
    """
    mat = _scores(S)
    _require_nonempty(mat)
    m, n = mat.shape
    if m != n:
        size = max(m, n)
        padded = np.full((size, size), -2.0)
        padded[:m, :n] = mat
    else:
        padded = mat
    rows, cols = linear_sum_assignment(padded, maximize=True)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if i < m and j < n]
    return CorrespondenceSet(_pairs_with_scores(mat, pairs), policy=POLICY_HUNGARIAN)


def match_sinkhorn(S, epsilon=0.001, max_iters=1000, tol=1e-6):
    """Entropic relaxation of the assignment problem, then mutual maximum.

    Alternates row/column scaling of exp(S / epsilon) toward uniform
    marginals (row sums 1, column sums m/n for an m-by-n matrix) and stops
    when the worst marginal violation drops below ``tol`` or ``max_iters``
    is reached. Non-convergence is not an error; the iteration count and
    final violation are reported in ``info``.
    """
    mat = _scores(S)
    _require_nonempty(mat)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    m, n = mat.shape

    # Subtract the global max before exponentiating so tiny epsilon does
    # not overflow; the tiny floor keeps fully-underflowed rows usable.
    kernel = np.exp((mat - mat.max()) / epsilon)
    np.maximum(kernel, 1e-300, out=kernel)

    col_target = m / n
    u = np.ones(m)
    v = np.ones(n)
    plan = kernel
    violation = np.inf
    iters = 0
    for iters in range(1, max_iters + 1):
        u = 1.0 / np.maximum(kernel @ v, 1e-300)
        v = col_target / np.maximum(kernel.T @ u, 1e-300)
        plan = u[:, None] * kernel * v[None, :]
        violation = max(
            float(np.abs(plan.sum(axis=1) - 1.0).max()),
            float(np.abs(plan.sum(axis=0) - col_target).max()),
        )
        if violation < tol:
            break

    pairs = _pairs_with_scores(mat, _mutual_index_pairs(plan))
    info = {
        "iterations": iters,
        "marginal_violation": violation,
        "converged": violation < tol,
        "epsilon": epsilon,
    }
    return CorrespondenceSet(pairs, policy=POLICY_SINKHORN, info=info)


def _deferred_acceptance(mat):
    """Row-proposing deferred acceptance over full preference lists.

    Requires rows <= cols; returns (row, col) pairs sorted by row. Ties in
    preference order break toward the lower index.
    """
    m, n = mat.shape
    pref = np.argsort(-mat, axis=1, kind="stable")
    col_order = np.argsort(-mat, axis=0, kind="stable")
    rank = np.empty((n, m), dtype=int)
    for j in range(n):
        rank[j, col_order[:, j]] = np.arange(m)

    next_choice = np.zeros(m, dtype=int)
    engaged = np.full(n, -1, dtype=int)
    free = list(range(m - 1, -1, -1))
    while free:
        i = free.pop()
        j = int(pref[i, next_choice[i]])
        next_choice[i] += 1
        current = engaged[j]
        if current == -1:
            engaged[j] = i
        elif rank[j, i] < rank[j, current]:
            engaged[j] = i
            free.append(current)
        else:
            free.append(i)
    return sorted((int(i), int(j)) for j, i in enumerate(engaged) if i >= 0)


def match_gale_shapley(S, proposer="source"):
    """Classic stable matching by deferred acceptance.

    Sources propose by default; when there are more sources than targets
    the roles are swapped internally and swapped back, so the output always
    contains min(m, n) pairs. ``proposer="target"`` selects the
    target-proposing variant.
    """
    mat = _scores(S)
    _require_nonempty(mat)
    if proposer not in ("source", "target"):
        raise ValueError("proposer must be 'source' or 'target'")
    work = mat if proposer == "source" else mat.T
    transposed = proposer == "target"
    if work.shape[0] > work.shape[1]:
        work = work.T
        transposed = not transposed
    pairs = _deferred_acceptance(work)
    if transposed:
        pairs = sorted((j, i) for (i, j) in pairs)
    return CorrespondenceSet(_pairs_with_scores(mat, pairs), policy=POLICY_GALE_SHAPLEY)


def binarize_scores(S, t1):
    """Entry 1 iff the score strictly exceeds t1."""
    mat = _scores(S)
    return (mat > t1).astype(np.uint8)


def noise_counts(s_bin):
    """Per source row, how many targets scored above the threshold."""
    return np.count_nonzero(np.asarray(s_bin), axis=1).astype(np.int64)


def derive_weights(counts, mode="inverse_count"):
    """Source priorities, strictly decreasing in noise count, in (0, 1].

    ``inverse_count``: 1 / (1 + count). ``reciprocal_rank``: 1 / rank of
    the count in ascending order, equal counts sharing a rank.
    """
    c = np.asarray(counts, dtype=np.int64)
    if mode == "inverse_count":
        return 1.0 / (1.0 + c.astype(np.float64))
    if mode == "reciprocal_rank":
        distinct = np.unique(c)
        rank = np.searchsorted(distinct, c) + 1
        return 1.0 / rank.astype(np.float64)
    raise ValueError(f"unknown weight mode {mode!r}")


def _topk_desc(mat, k):
    """Per-row indices of the k largest entries, best first.

    Ties inside the selected block break toward the lower index (the
    block is index-sorted before the stable value sort). Ties that
    straddle the selection boundary follow argpartition's deterministic
    pick.
    """
    m, n = mat.shape
    if k >= n:
        block = np.tile(np.arange(n), (m, 1))
    else:
        block = np.sort(np.argpartition(-mat, k - 1, axis=1)[:, :k], axis=1)
    vals = np.take_along_axis(mat, block, axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    return np.take_along_axis(block, order, axis=1)


def match_gs_matching(S, params=None, swap_roles=False):
    """Noise-count-weighted iterative stable matching with NN fallback.

    Three phases:

    1. Count, per source row, the entries above ``t1``; discard rows whose
       count exceeds ``t2`` (recorded in ``pruned_src``), and weight each
       surviving row by a priority that decreases with its count.
    2. Build top-K candidate lists per surviving row and per column of the
       weighted matrix, then run K rounds in which every unmatched source
       points at its best remaining candidate target and vice versa; a
       pair is committed only on mutual top preference and both endpoints
       are then removed. Committed pairs are one-to-one.
    3. Each still-unmatched source takes its argmax over the targets left
       unmatched by phase 2, scored by the unweighted matrix. Targets are
       not consumed here, so phase-3 pairs may share a target.

    The output lists phase-2 pairs first (``info["n_stable"]`` of them, in
    commit order) followed by phase-3 pairs by ascending source index.
    Scores always come from the unweighted input matrix.
    """
    mat = _scores(S)
    _require_nonempty(mat)
    if swap_roles:
        inner = match_gs_matching(mat.T, params=params, swap_roles=False)
        pairs = [(j, i, s) for (i, j, s) in inner.pairs]
        info = dict(inner.info)
        info["pruned_tgt"] = list(inner.pruned_src)
        return CorrespondenceSet(pairs, policy=POLICY_GS_MATCHING, info=info)

    p = params if params is not None else GsMatchingParams()
    m, n = mat.shape
    t1 = p.score_threshold_t1
    if t1 is None:
        t1 = float(np.quantile(mat, DEFAULT_T1_QUANTILE))
        t1 = min(max(t1, -1.0 + 1e-9), 1.0 - 1e-9)
    t2 = p.noise_count_max_t2
    if t2 is None:
        t2 = max(10, int(0.05 * n))

    counts = noise_counts(binarize_scores(mat, t1))
    pruned_src = np.flatnonzero(counts > t2)
    alive = np.flatnonzero(counts <= t2)
    resolved = {
        "k_iterations": p.k_iterations,
        "t1": t1,
        "t2": t2,
        "weight_mode": p.weight_mode,
    }
    if alive.size == 0:
        return CorrespondenceSet(
            [], policy=POLICY_GS_MATCHING, pruned_src=pruned_src.tolist(),
            info={"resolved": resolved, "n_stable": 0})

    weights = derive_weights(counts[alive], p.weight_mode)
    weighted = mat[alive] * weights[:, None]
    n_alive = alive.size

    k_rows = min(p.k_iterations, n)
    k_cols = min(p.k_iterations, n_alive)
    row_cand = _topk_desc(weighted, k_rows)            # (n_alive, k_rows) target indices
    col_cand = _topk_desc(weighted.T, k_cols)          # (n, k_cols) row positions
    row_cand_vals = np.take_along_axis(weighted, row_cand, axis=1)
    col_cand_vals = np.take_along_axis(weighted.T, col_cand, axis=1)

    matched_row = np.zeros(n_alive, dtype=bool)
    matched_col = np.zeros(n, dtype=bool)
    committed = []
    row_ids = np.arange(n_alive)
    col_ids = np.arange(n)
    for _ in range(p.k_iterations):
        if matched_row.all() or matched_col.all():
            break
        row_vals = np.where(matched_col[row_cand] | matched_row[:, None],
                            -np.inf, row_cand_vals)
        row_pick = np.argmax(row_vals, axis=1)
        row_prop = np.where(row_vals[row_ids, row_pick] > -np.inf,
                            row_cand[row_ids, row_pick], -1)
        col_vals = np.where(matched_row[col_cand] | matched_col[:, None],
                            -np.inf, col_cand_vals)
        col_pick = np.argmax(col_vals, axis=1)
        col_prop = np.where(col_vals[col_ids, col_pick] > -np.inf,
                            col_cand[col_ids, col_pick], -1)

        proposing = np.flatnonzero(row_prop >= 0)
        mutual = proposing[col_prop[row_prop[proposing]] == proposing]
        if mutual.size == 0:
            break  # nothing changed; further rounds would repeat verbatim
        for i in mutual:
            committed.append((int(i), int(row_prop[i])))
        matched_row[mutual] = True
        matched_col[row_prop[mutual]] = True

    n_stable = len(committed)
    leftover = np.flatnonzero(~matched_row)
    remaining = np.flatnonzero(~matched_col)
    fallback = []
    if leftover.size and remaining.size:
        sub = mat[alive[leftover]][:, remaining]
        best = np.argmax(sub, axis=1)
        fallback = [(int(i), int(remaining[b])) for i, b in zip(leftover, best)]

    index_pairs = [(int(alive[i]), j) for (i, j) in committed]
    index_pairs += [(int(alive[i]), j) for (i, j) in fallback]
    pairs = _pairs_with_scores(mat, index_pairs)
    info = {"resolved": resolved, "n_stable": n_stable}
    return CorrespondenceSet(pairs, policy=POLICY_GS_MATCHING,
                             pruned_src=pruned_src.tolist(), info=info)


_POLICY_FUNCS = {
    POLICY_NN: match_nearest_neighbor,
    POLICY_MUTUAL: match_mutual_nn,
    POLICY_HUNGARIAN: match_hungarian,
    POLICY_SINKHORN: match_sinkhorn,
    POLICY_GALE_SHAPLEY: match_gale_shapley,
    POLICY_GS_MATCHING: match_gs_matching,
}

_POLICY_ALIASES = {
    "nn": POLICY_NN,
    "nearest": POLICY_NN,
    "mutual": POLICY_MUTUAL,
    "mutual_nn": POLICY_MUTUAL,
    "mutual-nn": POLICY_MUTUAL,
    "hungarian": POLICY_HUNGARIAN,
    "sinkhorn": POLICY_SINKHORN,
    "gale_shapley": POLICY_GALE_SHAPLEY,
    "gale-shapley": POLICY_GALE_SHAPLEY,
    "gs": POLICY_GS_MATCHING,
    "gs_matching": POLICY_GS_MATCHING,
    "gs-matching": POLICY_GS_MATCHING,
}


def resolve_policy(name):
    """Map a user-facing policy name or alias to its canonical tag."""
    try:
        return _POLICY_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown matching policy {name!r}") from None


def run_policy(name, S, **kwargs):
    """Dispatch a score matrix to the named policy."""
    return _POLICY_FUNCS[resolve_policy(name)](S, **kwargs)


def save_correspondences(path, corr, fmt=None):
    """Write a correspondence set as JSON (default) or CSV by extension."""
    path = str(path)
    if fmt is None:
        fmt = "csv" if path.endswith(".csv") else "json"
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(corr.to_dict(), fh, indent=1)
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["src", "tgt", "score"])
            for (i, j, s) in corr.pairs:
                writer.writerow([i, j, repr(s)])
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_correspondences(path):
    path = str(path)
    if path.endswith(".csv"):
        pairs = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                pairs.append((int(row["src"]), int(row["tgt"]), float(row["score"])))
        return CorrespondenceSet(pairs)
    with open(path) as fh:
        return CorrespondenceSet.from_dict(json.load(fh))
