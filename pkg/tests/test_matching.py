import itertools

import numpy as np
import pytest

from gsmatch.errors import EmptyInput
from gsmatch.matching import (CorrespondenceSet, GsMatchingParams,
                              binarize_scores, derive_weights,
                              load_correspondences, match_gale_shapley,
                              match_gs_matching, match_hungarian,
                              match_mutual_nn, match_nearest_neighbor,
                              match_sinkhorn, noise_counts,
                              save_correspondences)

DIAG3 = np.full((3, 3), 0.1) + np.eye(3) * 0.8


def pair_set(corr):
    return {(i, j) for (i, j, _) in corr.pairs}


def gs_blocking_pairs(S, matching):
    """Classic blocking pairs with singles allowed on the target side."""
    m, n = S.shape
    partner_of_src = {i: j for (i, j) in matching}
    partner_of_tgt = {j: i for (i, j) in matching}
    blocking = []
    for i in range(m):
        for j in range(n):
            if partner_of_src.get(i) == j:
                continue
            src_prefers = i not in partner_of_src or S[i, j] > S[i, partner_of_src[i]]
            tgt_prefers = j not in partner_of_tgt or S[i, j] > S[partner_of_tgt[j], j]
            if src_prefers and tgt_prefers:
                blocking.append((i, j))
    return blocking


class TestNearestNeighbor:
    def test_diagonal_dominant(self):
        assert pair_set(match_nearest_neighbor(DIAG3)) == {(0, 0), (1, 1), (2, 2)}

    def test_many_to_one_allowed(self):
        S = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3]])
        assert pair_set(match_nearest_neighbor(S)) == {(0, 0), (1, 0), (2, 0)}

    def test_matches_row_argmax_oracle(self):
        rng = np.random.default_rng(0)
        S = rng.uniform(-1, 1, (6, 8))
        corr = match_nearest_neighbor(S)
        assert len(corr) == 6
        for (i, j, s) in corr.pairs:
            assert j == int(np.argmax(S[i]))
            assert s == S[i, j]

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            match_nearest_neighbor(np.empty((0, 4)))


class TestMutualNN:
    def test_diagonal_dominant(self):
        assert pair_set(match_mutual_nn(DIAG3)) == {(0, 0), (1, 1), (2, 2)}

    def test_dominant_column_leaves_one_pair(self):
        S = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3]])
        corr = match_mutual_nn(S)
        assert pair_set(corr) == {(0, 0)}

    def test_matches_intersection_oracle(self):
        rng = np.random.default_rng(1)
        S = rng.uniform(-1, 1, (10, 10))
        got = pair_set(match_mutual_nn(S))
        expected = set()
        for i in range(10):
            j = int(np.argmax(S[i]))
            if int(np.argmax(S[:, j])) == i:
                expected.add((i, j))
        assert got == expected

    def test_one_to_one(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            S = rng.uniform(-1, 1, (rng.integers(1, 12), rng.integers(1, 12)))
            corr = match_mutual_nn(S)
            srcs = [i for (i, _, _) in corr.pairs]
            tgts = [j for (_, j, _) in corr.pairs]
            assert len(set(srcs)) == len(srcs) and len(set(tgts)) == len(tgts)


class TestHungarian:
    def test_beats_nearest_neighbor_on_shared_column(self):
        S = np.array([[0.9, 0.1], [0.8, 0.2]])
        corr = match_hungarian(S)
        assert pair_set(corr) == {(0, 0), (1, 1)}
        assert corr.scores().sum() == pytest.approx(1.1)

    def test_diagonal_matrix(self):
        assert pair_set(match_hungarian(np.eye(5))) == {(i, i) for i in range(5)}

    def test_matches_exhaustive_permutation_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            S = rng.choice([0.0, 0.5, 1.0], size=(5, 5))
            total = match_hungarian(S).scores().sum()
            best = max(sum(S[i, p[i]] for i in range(5))
                       for p in itertools.permutations(range(5)))
            assert total == pytest.approx(best, abs=1e-12)

    def test_rectangular_drops_padding(self):
        rng = np.random.default_rng(4)
        S = rng.uniform(-1, 1, (3, 7))
        corr = match_hungarian(S)
        assert len(corr) == 3
        assert all(0 <= j < 7 for (_, j, _) in corr.pairs)

    def test_dominates_other_one_to_one_policies(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            S = rng.uniform(0.0, 1.0, (8, 8))
            best = match_hungarian(S).scores().sum()
            assert best >= match_gale_shapley(S).scores().sum() - 1e-12
            assert best >= match_mutual_nn(S).scores().sum() - 1e-12
            gs = match_gs_matching(S, GsMatchingParams(
                k_iterations=3, score_threshold_t1=0.9, noise_count_max_t2=8))
            stable_part = gs.pairs[:gs.info["n_stable"]]
            assert best >= sum(s for (_, _, s) in stable_part) - 1e-12


class TestSinkhorn:
    def test_single_entry(self):
        corr = match_sinkhorn(np.array([[0.4]]))
        assert pair_set(corr) == {(0, 0)}

    def test_dominant_diagonal_low_epsilon(self):
        S = np.full((4, 4), 0.05) + np.eye(4) * 0.85
        corr = match_sinkhorn(S, epsilon=0.001)
        assert pair_set(corr) == {(i, i) for i in range(4)}

    def test_marginals_converge(self):
        # epsilon large enough that the scaling kernel is well conditioned;
        # tiny epsilon contracts so slowly the marginals never settle
        rng = np.random.default_rng(6)
        S = rng.uniform(-1, 1, (8, 8))
        corr = match_sinkhorn(S, epsilon=0.5, max_iters=5000, tol=1e-8)
        assert corr.info["converged"]
        assert corr.info["marginal_violation"] < 1e-8

    def test_rectangular_marginals(self):
        rng = np.random.default_rng(7)
        S = rng.uniform(-1, 1, (6, 9))
        corr = match_sinkhorn(S, epsilon=0.5, max_iters=5000, tol=1e-9)
        assert corr.info["converged"]

    def test_nonconvergence_reported_not_raised(self):
        rng = np.random.default_rng(8)
        S = rng.uniform(-1, 1, (5, 5))
        corr = match_sinkhorn(S, epsilon=0.05, max_iters=2, tol=1e-12)
        assert not corr.info["converged"]
        assert corr.info["iterations"] == 2

    def test_invalid_epsilon(self):
        with pytest.raises(ValueError):
            match_sinkhorn(np.eye(2), epsilon=0.0)


class TestGaleShapley:
    def test_diagonal_dominant(self):
        assert pair_set(match_gale_shapley(DIAG3)) == {(0, 0), (1, 1), (2, 2)}

    def test_unique_stable_instance(self):
        S = np.random.default_rng(0).uniform(0, 1, (3, 3))
        stable = []
        for perm in itertools.permutations(range(3)):
            matching = [(i, perm[i]) for i in range(3)]
            if not gs_blocking_pairs(S, matching):
                stable.append(set(matching))
        assert len(stable) == 1
        assert pair_set(match_gale_shapley(S)) == stable[0]

    def test_no_blocking_pairs_random(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            S = rng.uniform(0, 1, (7, 7))
            corr = match_gale_shapley(S)
            assert gs_blocking_pairs(S, list(pair_set(corr))) == []

    def test_rectangular_both_ways(self):
        rng = np.random.default_rng(10)
        for shape in [(4, 9), (9, 4)]:
            S = rng.uniform(0, 1, shape)
            corr = match_gale_shapley(S)
            assert len(corr) == 4
            assert gs_blocking_pairs(S, list(pair_set(corr))) == []

    def test_target_proposing_variant_is_stable(self):
        rng = np.random.default_rng(11)
        S = rng.uniform(0, 1, (6, 6))
        corr = match_gale_shapley(S, proposer="target")
        assert gs_blocking_pairs(S, list(pair_set(corr))) == []


class TestAlgebraSteps:
    def test_binarize_all_below(self):
        assert binarize_scores(np.full((3, 3), 0.2), 0.5).sum() == 0

    def test_binarize_all_above(self):
        assert binarize_scores(np.full((2, 4), 0.9), 0.5).sum() == 8

    def test_binarize_strict_inequality(self):
        out = binarize_scores(np.array([[0.5, 0.6], [0.4, 0.5]]), 0.5)
        np.testing.assert_array_equal(out, [[0, 1], [0, 0]])

    def test_noise_counts_zero_matrix(self):
        np.testing.assert_array_equal(noise_counts(np.zeros((3, 5))), [0, 0, 0])

    def test_noise_counts_all_ones(self):
        np.testing.assert_array_equal(noise_counts(np.ones((2, 7))), [7, 7])

    def test_noise_counts_row_sums(self):
        rng = np.random.default_rng(12)
        sbin = binarize_scores(rng.uniform(0, 1, (6, 9)), 0.5)
        np.testing.assert_array_equal(noise_counts(sbin), sbin.sum(axis=1))

    def test_weights_equal_for_ties(self):
        np.testing.assert_array_equal(derive_weights([0, 0, 0]), [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(
            derive_weights([4, 4, 4], "reciprocal_rank"), [1.0, 1.0, 1.0])

    def test_inverse_count_formula(self):
        np.testing.assert_allclose(derive_weights([0, 5]), [1.0, 1.0 / 6.0])

    def test_weight_order_reverses_count_order(self):
        rng = np.random.default_rng(13)
        counts = rng.integers(0, 50, size=30)
        for mode in ("inverse_count", "reciprocal_rank"):
            w = derive_weights(counts, mode)
            assert (w > 0).all() and (w <= 1).all()
            for a in range(30):
                for b in range(30):
                    if counts[a] < counts[b]:
                        assert w[a] > w[b]


def resolved_gs_internals(S, corr):
    """Recompute pruning, weights, and candidate lists from the resolved
    parameters so stability can be checked independently."""
    S = np.asarray(S, dtype=float)
    res = corr.info["resolved"]
    counts = (S > res["t1"]).sum(axis=1)
    alive = np.flatnonzero(counts <= res["t2"])
    weights = derive_weights(counts[alive], res["weight_mode"])
    weighted = S[alive] * weights[:, None]
    k = res["k_iterations"]
    row_lists = [set(np.argsort(-weighted[r], kind="stable")[:k]) for r in range(len(alive))]
    col_lists = [set(np.argsort(-weighted[:, c], kind="stable")[:k])
                 for c in range(S.shape[1])]
    return alive, weighted, row_lists, col_lists


def gs_matching_blocking_pairs(S, corr):
    """Blocking pairs of the stable phase, restricted to mutual top-K
    candidates. Pairs where both endpoints ended unmatched witness
    candidate-list deadlock, not instability, and are excluded."""
    alive, weighted, row_lists, col_lists = resolved_gs_internals(S, corr)
    alive_pos = {int(src): r for r, src in enumerate(alive)}
    stable = corr.pairs[:corr.info["n_stable"]]
    partner_of_row = {alive_pos[i]: j for (i, j, _) in stable}
    partner_of_col = {j: alive_pos[i] for (i, j, _) in stable}
    blocking = []
    for r in range(len(alive)):
        for j in row_lists[r]:
            if r not in col_lists[j] or partner_of_row.get(r) == j:
                continue
            r_matched = r in partner_of_row
            j_matched = j in partner_of_col
            if not r_matched and not j_matched:
                continue
            r_prefers = not r_matched or weighted[r, j] > weighted[r, partner_of_row[r]]
            j_prefers = not j_matched or weighted[r, j] > weighted[partner_of_col[j], j]
            if r_prefers and j_prefers:
                blocking.append((int(alive[r]), int(j)))
    return blocking


class TestGsMatching:
    def test_hand_simulated_two_by_two(self):
        S = np.array([[0.9, 0.2], [0.8, 0.3]])
        corr = match_gs_matching(S, GsMatchingParams(
            k_iterations=1, score_threshold_t1=0.5, noise_count_max_t2=2))
        assert corr.pairs == [(0, 0, 0.9), (1, 1, 0.3)]
        assert corr.info["n_stable"] == 1
        assert corr.pruned_src == []

    def test_diagonal_dominant_commits_in_round_one(self):
        corr = match_gs_matching(DIAG3, GsMatchingParams(
            k_iterations=1, score_threshold_t1=0.5, noise_count_max_t2=3))
        assert pair_set(corr) == {(0, 0), (1, 1), (2, 2)}
        assert corr.info["n_stable"] == 3

    def test_noisy_source_is_pruned(self):
        # row 1 exceeds t1 everywhere; t2 = n/2 = 2 prunes it entirely
        S = np.array([
            [0.95, 0.10, 0.10, 0.10],
            [0.90, 0.90, 0.90, 0.90],
            [0.10, 0.10, 0.92, 0.10],
        ])
        corr = match_gs_matching(S, GsMatchingParams(
            k_iterations=2, score_threshold_t1=0.8, noise_count_max_t2=2))
        assert corr.pruned_src == [1]
        assert all(i != 1 for (i, _, _) in corr.pairs)
        assert {i for (i, _, _) in corr.pairs} == {0, 2}

    def test_vacuous_pruning_allowed(self):
        rng = np.random.default_rng(14)
        S = rng.uniform(0, 1, (5, 5))
        corr = match_gs_matching(S, GsMatchingParams(
            k_iterations=2, score_threshold_t1=0.5, noise_count_max_t2=5))
        assert corr.pruned_src == []
        assert len(corr) == 5

    def test_stable_phase_one_to_one_and_coverage(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            m = int(rng.integers(1, 20))
            n = int(rng.integers(m, 25))
            S = rng.uniform(-1, 1, (m, n))
            corr = match_gs_matching(S)
            stable = corr.pairs[:corr.info["n_stable"]]
            srcs = [i for (i, _, _) in stable]
            tgts = [j for (_, j, _) in stable]
            assert len(set(srcs)) == len(srcs)
            assert len(set(tgts)) == len(tgts)
            # every unpruned source appears exactly once overall
            all_srcs = [i for (i, _, _) in corr.pairs]
            assert sorted(all_srcs + list(corr.pruned_src)) == list(range(m))

    def test_stable_phase_has_no_blocking_pairs(self):
        rng = np.random.default_rng(16)
        for _ in range(30):
            n = int(rng.integers(2, 15))
            S = rng.uniform(-1, 1, (n, n))
            corr = match_gs_matching(S, GsMatchingParams(k_iterations=3))
            assert gs_matching_blocking_pairs(S, corr) == []

    def test_fallback_scores_come_from_unweighted_matrix(self):
        rng = np.random.default_rng(17)
        S = rng.uniform(-1, 1, (10, 12))
        corr = match_gs_matching(S)
        for (i, j, s) in corr.pairs:
            assert s == S[i, j]

    def test_empty_matrix_raises(self):
        with pytest.raises(EmptyInput):
            match_gs_matching(np.empty((3, 0)))

    def test_all_pruned_gives_empty_output(self):
        S = np.full((3, 4), 0.99)
        corr = match_gs_matching(S, GsMatchingParams(
            k_iterations=1, score_threshold_t1=0.5, noise_count_max_t2=1))
        assert len(corr) == 0
        assert corr.pruned_src == [0, 1, 2]

    def test_swap_roles_transposes(self):
        rng = np.random.default_rng(18)
        S = rng.uniform(0, 1, (6, 9))
        params = GsMatchingParams(k_iterations=2, score_threshold_t1=0.5,
                                  noise_count_max_t2=9)
        direct = match_gs_matching(S.T, params)
        swapped = match_gs_matching(S, params, swap_roles=True)
        assert {(j, i) for (i, j, _) in direct.pairs} == pair_set(swapped)


class TestScaleInvariance:
    def test_argmax_policies_unchanged_by_positive_scaling(self):
        rng = np.random.default_rng(19)
        S = rng.uniform(-1, 1, (9, 9))
        for c in (0.5, 2.0):
            assert pair_set(match_nearest_neighbor(S)) == pair_set(match_nearest_neighbor(c * S))
            assert pair_set(match_mutual_nn(S)) == pair_set(match_mutual_nn(c * S))
            assert pair_set(match_hungarian(S)) == pair_set(match_hungarian(c * S))
            assert pair_set(match_gale_shapley(S)) == pair_set(match_gale_shapley(c * S))
            params = GsMatchingParams(k_iterations=2, score_threshold_t1=0.4,
                                      noise_count_max_t2=9)
            scaled = GsMatchingParams(k_iterations=2, score_threshold_t1=0.4 * c,
                                      noise_count_max_t2=9)
            assert pair_set(match_gs_matching(S, params)) == pair_set(
                match_gs_matching(c * S, scaled))


class TestSerialization:
    def test_json_roundtrip(self, tmp_path):
        corr = CorrespondenceSet([(0, 3, 0.5), (2, 1, -0.25)],
                                 policy="gs_matching", pruned_src=[1])
        path = tmp_path / "corr.json"
        save_correspondences(path, corr)
        back = load_correspondences(path)
        assert back.pairs == corr.pairs
        assert back.policy == "gs_matching"
        assert back.pruned_src == [1]

    def test_csv_roundtrip(self, tmp_path):
        corr = CorrespondenceSet([(0, 3, 0.5), (2, 1, -0.25)])
        path = tmp_path / "corr.csv"
        save_correspondences(path, corr)
        back = load_correspondences(path)
        assert back.pairs == corr.pairs

    def test_duplicate_pairs_rejected(self):
        with pytest.raises(ValueError):
            CorrespondenceSet([(0, 1, 0.5), (0, 1, 0.6)])
