"""Order statistics of feature scores.

Models inlier and outlier similarity scores as Gaussians and answers: if a
source point picks the target with the highest score, how likely is that
pick an inlier? Exposes the max-distribution CDF/PDF, the selection
probability (by quadrature), a conditional variant (by Monte Carlo), curve
generation over growing outlier counts, and score-model fitting.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConditionTooRare, InsufficientData, InvalidCount

SIGMA_FLOOR = 1e-6


@dataclass
class ScoreModel:
    """Gaussian score models for inliers and outliers."""

    mu_inlier: float
    sigma_inlier: float
    mu_outlier: float
    sigma_outlier: float

    def __post_init__(self):
        if self.sigma_inlier <= 0 or self.sigma_outlier <= 0:
            raise ValueError("sigmas must be positive")

    def inlier_dist(self, truncated=False):
        return _gaussian(self.mu_inlier, self.sigma_inlier, truncated)

    def outlier_dist(self, truncated=False):
        return _gaussian(self.mu_outlier, self.sigma_outlier, truncated)


@dataclass
class MatchPopulation:
    """How many candidate targets are true matches vs noise."""

    n_inliers: int
    n_outliers: int

    def __post_init__(self):
        if self.n_inliers < 0 or self.n_outliers < 0:
            raise ValueError("counts must be nonnegative")
        if self.n_inliers + self.n_outliers < 1:
            raise ValueError("population must contain at least one sample")


@dataclass
class MonteCarloEstimate:
    probability: float
    std_error: float
    accepted: int
    samples: int


def _gaussian(mu, sigma, truncated=False):
    """Plain normal, or a normal truncated to the cosine range [-1, 1]."""
    if truncated:
        a = (-1.0 - mu) / sigma
        b = (1.0 - mu) / sigma
        return stats.truncnorm(a, b, loc=mu, scale=sigma)
    return stats.norm(loc=mu, scale=sigma)


def max_cdf(x, count, dist):
    """CDF of the maximum of ``count`` iid draws: F(x)**count."""
    if count < 1:
        raise InvalidCount(f"count must be >= 1, got {count}")
    return dist.cdf(x) ** count


def max_pdf(x, count, dist):
    """Density of the maximum: count * F(x)**(count-1) * f(x)."""
    if count < 1:
        raise InvalidCount(f"count must be >= 1, got {count}")
    return count * dist.cdf(x) ** (count - 1) * dist.pdf(x)


def _integration_limits(model: ScoreModel, truncated: bool):
    if truncated:
        return -1.0, 1.0
    span = max(abs(model.mu_inlier), abs(model.mu_outlier)) \
        + 8.0 * max(model.sigma_inlier, model.sigma_outlier)
    return -span, span


def prob_inlier_selected(model: ScoreModel, pop: MatchPopulation,
                         truncated=False, nodes=128) -> float:
    """P(max inlier score > max outlier score) by Gauss-Legendre quadrature.

    The double integral runs over the outlier maximum y and, inside, the
    inlier maximum x from y up to the upper limit. Limits cover the
    Gaussian mass (mean +/- 8 sigma) unless ``truncated`` is set, which
    restricts both base distributions and the integral to [-1, 1].
    """
    if pop.n_inliers < 1 or pop.n_outliers < 1:
        raise ValueError("both populations must be nonempty")
    lo, hi = _integration_limits(model, truncated)
    dist_x = model.inlier_dist(truncated)
    dist_y = model.outlier_dist(truncated)

    nodes_u, weights_u = np.polynomial.legendre.leggauss(nodes)
    y = 0.5 * (hi - lo) * nodes_u + 0.5 * (hi + lo)
    wy = 0.5 * (hi - lo) * weights_u
    fy = max_pdf(y, pop.n_outliers, dist_y)

    # inner integral over x in [y_i, hi], one scaled node set per y_i
    half = 0.5 * (hi - y)
    x = y[:, None] + half[:, None] * (nodes_u[None, :] + 1.0)
    fx = max_pdf(x, pop.n_inliers, dist_x)
    inner = (fx * weights_u[None, :]).sum(axis=1) * half
    p = float((wy * fy * inner).sum())
    return min(max(p, 0.0), 1.0)


def prob_inlier_selected_mc(model: ScoreModel, pop: MatchPopulation,
                            samples=1_000_000, seed=0, truncated=False,
                            chunk=131072) -> MonteCarloEstimate:
    """Monte Carlo companion to :func:`prob_inlier_selected`."""
    if pop.n_inliers < 1 or pop.n_outliers < 1:
        raise ValueError("both populations must be nonempty")
    rng = np.random.Generator(np.random.Philox(seed))
    dist_x = model.inlier_dist(truncated)
    dist_y = model.outlier_dist(truncated)
    hits = 0
    done = 0
    while done < samples:
        c = min(chunk, samples - done)
        x = dist_x.rvs(size=(c, pop.n_inliers), random_state=rng)
        y = dist_y.rvs(size=(c, pop.n_outliers), random_state=rng)
        hits += int(np.count_nonzero(x.max(axis=1) > y.max(axis=1)))
        done += c
    p = hits / samples
    se = float(np.sqrt(p * (1.0 - p) / samples))
    return MonteCarloEstimate(p, se, samples, samples)


def prob_inlier_selected_conditional(model: ScoreModel, pop: MatchPopulation,
                                     k: int, samples=1_000_000, seed=0,
                                     truncated=False, chunk=131072) -> MonteCarloEstimate:
    """P(max inlier > max outlier | k-th largest outlier > inlier mean).

    Estimated by rejection sampling: populations are drawn as in the
    unconditional case and only those whose k-th largest outlier score
    exceeds the inlier mean are kept. Raises ConditionTooRare when no draw
    ever satisfies the condition.
    """
    if pop.n_inliers < 1 or pop.n_outliers < 1:
        raise ValueError("both populations must be nonempty")
    if not 1 <= k <= pop.n_outliers:
        raise ValueError(f"k must be in [1, {pop.n_outliers}], got {k}")
    rng = np.random.Generator(np.random.Philox(seed))
    dist_x = model.inlier_dist(truncated)
    dist_y = model.outlier_dist(truncated)
    accepted = 0
    hits = 0
    done = 0
    while done < samples:
        c = min(chunk, samples - done)
        x = dist_x.rvs(size=(c, pop.n_inliers), random_state=rng)
        y = dist_y.rvs(size=(c, pop.n_outliers), random_state=rng)
        # k-th largest sits at position n-k of the ascending partition
        kth = np.partition(y, pop.n_outliers - k, axis=1)[:, pop.n_outliers - k]
        cond = kth > model.mu_inlier
        accepted += int(np.count_nonzero(cond))
        if accepted:
            hits += int(np.count_nonzero(
                (x.max(axis=1) > y.max(axis=1)) & cond))
        done += c
    if accepted == 0:
        raise ConditionTooRare(
            f"condition met 0 times in {samples} draws", accepted=0, samples=samples)
    p = hits / accepted
    se = float(np.sqrt(p * (1.0 - p) / accepted))
    return MonteCarloEstimate(p, se, accepted, samples)


def selection_probability_curve(model: ScoreModel, n_inliers: int,
                                size_multipliers, truncated=False, nodes=128):
    """Rows (size, n_outliers = size * n_inliers, probability)."""
    rows = []
    for size in size_multipliers:
        n_out = int(size) * n_inliers
        pop = MatchPopulation(n_inliers, n_out)
        rows.append({
            "size": int(size),
            "n": n_out,
            "probability": prob_inlier_selected(model, pop, truncated=truncated,
                                                nodes=nodes),
        })
    return rows


def fit_score_model(inlier_scores, outlier_scores) -> ScoreModel:
    """Sample mean and standard deviation per class (ddof=1).

    Degenerate zero-spread samples get their sigma clamped to 1e-6 with a
    warning instead of producing an unusable model.
    """
    xs = np.asarray(inlier_scores, dtype=np.float64)
    ys = np.asarray(outlier_scores, dtype=np.float64)
    if xs.size < 2 or ys.size < 2:
        raise InsufficientData("need at least 2 samples per class")

    def _stats(v, label):
        sigma = float(v.std(ddof=1))
        if sigma < SIGMA_FLOOR:
            warnings.warn(f"{label} score spread below {SIGMA_FLOOR}; clamping sigma")
            sigma = SIGMA_FLOOR
        return float(v.mean()), sigma

    mu1, s1 = _stats(xs, "inlier")
    mu2, s2 = _stats(ys, "outlier")
    return ScoreModel(mu1, s1, mu2, s2)
