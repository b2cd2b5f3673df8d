"""Correspondence-based rigid point cloud registration.

The package turns two point clouds into per-point descriptors, scores all
descriptor pairs, selects correspondences under one of several matching
policies (including a noise-count-weighted stable matching), rejects
outliers, and estimates the aligning rigid transform. A benchmark harness
and an order-statistics analysis of score-based selection round it out.
"""

from .bench import (EvalReport, SyntheticPairSpec, generate_pair, inlier_ratio,
                    non_repetitive_inlier_ratio, policy_comparison,
                    registration_recall, timing_study)
from .descriptors import (DescriptorSet, compute_descriptors, estimate_normals,
                          load_descriptors, save_descriptors)
from .geometry import (DEFAULT_INLIER_TAU, PointCloud, RigidTransform,
                       alignment_error, apply_transform, estimate_transform_svd,
                       inlier_set, rotation_error, translation_error)
from .matching import (ALL_POLICIES, CorrespondenceSet, GsMatchingParams,
                       binarize_scores, derive_weights, load_correspondences,
                       match_gale_shapley, match_gs_matching, match_hungarian,
                       match_mutual_nn, match_nearest_neighbor, match_sinkhorn,
                       noise_counts, run_policy, save_correspondences)
from .ply_io import load_ply, save_ply
from .probability import (MatchPopulation, ScoreModel, fit_score_model, max_cdf,
                          max_pdf, prob_inlier_selected,
                          prob_inlier_selected_conditional,
                          prob_inlier_selected_mc, selection_probability_curve)
from .registration import (PipelineRun, RansacParams, RegistrationResult,
                           ransac_register, register_pipeline,
                           spectral_matching_register)
from .similarity import SimilarityMatrix, cosine_similarity_matrix

__version__ = "0.1.0"
