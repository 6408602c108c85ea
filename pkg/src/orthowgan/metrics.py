"""Diagnostics: Lipschitz estimation, the critic generalization tournament,
Voronoi-cell mode statistics, singular-value spectra, and an exact
small-sample 1-Wasserstein oracle.

Everything here is deterministic given the inputs and the seeded generator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.cluster.vq
import scipy.optimize
import scipy.spatial.distance
import scipy.stats

from .autodiff import MlpParams, forward, input_gradient
from .linalg import svd
from .ortho import reshape_conv


def interpolate_grad_norms(
    critic: MlpParams,
    x_real: np.ndarray,
    x_fake: np.ndarray,
    n_points: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-point gradient norms of the critic on random convex combinations
    of the two sample pools."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    ir = rng.integers(0, x_real.shape[0], size=n_points)
    jf = rng.integers(0, x_fake.shape[0], size=n_points)
    eps = rng.uniform(0.0, 1.0, size=(n_points, 1))
    x_hat = eps * x_real[ir] + (1.0 - eps) * x_fake[jf]
    g = input_gradient(critic, x_hat)
    return np.linalg.norm(g, axis=1)


def estimate_lipschitz(
    critic: MlpParams,
    x_real: np.ndarray,
    x_fake: np.ndarray,
    n_points: int,
    rng: np.random.Generator,
) -> float:
    """Max gradient norm over interpolates between the two supports.

    A Lipschitz constant is a supremum, so the max (not the mean penalty
    deviation) is reported; callers wanting the mean deviation can use
    interpolate_grad_norms directly.
    """
    return float(interpolate_grad_norms(critic, x_real, x_fake, n_points, rng).max())


def wasserstein_estimate(
    critic: MlpParams,
    generator: MlpParams,
    real: np.ndarray,
    n_gen: int,
    rng: np.random.Generator,
) -> float:
    """Mean critic value on real samples minus mean on n_gen generated ones."""
    real = np.asarray(real, dtype=np.float64)
    if real.size == 0:
        raise ValueError("real must be nonempty")
    if n_gen < 1:
        raise ValueError("n_gen must be >= 1")
    z = rng.standard_normal((n_gen, generator.in_dim))
    fake = forward(generator, z)
    return float(forward(critic, real).mean() - forward(critic, fake).mean())


@dataclass
class TournamentResult:
    """Pairwise generalization scores for a set of critic/generator pairs.

    w_raw[i, j] is critic i's distance estimate against generator j on unseen
    data, w_hat[i] its baseline with its own generator on training data,
    w_rel the relative scores (w_raw - w_hat) / |w_hat| and s their row sums.
    Models with |w_hat| <= 1e-9 are excluded (rows/cols filled with NaN).
    """

    n_models: int
    w_raw: np.ndarray
    w_hat: np.ndarray
    w_rel: np.ndarray
    s: np.ndarray
    excluded: list[int]


def tournament(
    models: list[tuple[MlpParams, MlpParams]],
    train_data: np.ndarray,
    test_data: np.ndarray,
    n_gen: int,
    rng: np.random.Generator,
) -> TournamentResult:
    """Cross-evaluate every critic against every generator.

    Baselines use the training pool, cross terms the held-out pool. The
    relative score is invariant to positive rescaling of a critic because the
    scale cancels between numerator and denominator.
    """
    n = len(models)
    if n < 2:
        raise ValueError("tournament needs at least 2 models")
    # one independent child stream per estimate keeps cells order-independent
    seeds = rng.integers(0, 2**63 - 1, size=n * (n + 1))
    w_hat = np.empty(n)
    for i, (critic, gen) in enumerate(models):
        w_hat[i] = wasserstein_estimate(
            critic, gen, train_data, n_gen, np.random.default_rng(seeds[i])
        )
    w_raw = np.empty((n, n))
    for i, (critic, _) in enumerate(models):
        for j, (_, gen) in enumerate(models):
            w_raw[i, j] = wasserstein_estimate(
                critic, gen, test_data, n_gen, np.random.default_rng(seeds[n + i * n + j])
            )
    excluded = [i for i in range(n) if abs(w_hat[i]) <= 1e-9]
    w_rel = np.full((n, n), np.nan)
    s = np.full(n, np.nan)
    for i in range(n):
        if i in excluded:
            continue
        w_rel[i] = (w_raw[i] - w_hat[i]) / abs(w_hat[i])
        s[i] = w_rel[i].sum()
    return TournamentResult(n, w_raw, w_hat, w_rel, s, excluded)


@dataclass
class BinStat:
    train_count: int
    gen_count: int
    z_statistic: float
    significant: bool
    skipped: bool = False


@dataclass
class ModeReport:
    k: int
    significant_bins: int
    skipped_bins: int
    per_bin: list[BinStat]


def ndb_modes(
    train: np.ndarray,
    generated: np.ndarray,
    k: int,
    alpha: float,
    rng: np.random.Generator,
) -> ModeReport:
    """Count Voronoi cells where generated mass is significantly below train mass.

    Cells come from seeded k-means (k-means++ init, 50 iterations) on the
    training set; both sets are assigned to the nearest center and each cell
    gets a one-sided two-proportion z-test with pooled variance at level
    alpha. Cells with no training samples are skipped and reported.
    """
    train = np.asarray(train, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if not 1 <= k <= min(100, train.shape[0]):
        raise ValueError(f"k must be in [1, min(100, n_train)], got {k}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # kmeans2 warns about empty cells; handled below
        centers, train_labels = scipy.cluster.vq.kmeans2(
            train, k, iter=50, minit="++", seed=rng
        )
    gen_labels, _ = scipy.cluster.vq.vq(generated, centers)
    n_t, n_g = train.shape[0], generated.shape[0]
    z_crit = float(scipy.stats.norm.ppf(alpha))
    per_bin: list[BinStat] = []
    significant = 0
    skipped = 0
    for cell in range(k):
        c_t = int((train_labels == cell).sum())
        c_g = int((gen_labels == cell).sum())
        if c_t == 0:
            per_bin.append(BinStat(0, c_g, float("nan"), False, skipped=True))
            skipped += 1
            continue
        p_t = c_t / n_t
        p_g = c_g / n_g if n_g > 0 else 0.0
        pooled = (c_t + c_g) / (n_t + n_g)
        se = np.sqrt(pooled * (1.0 - pooled) * (1.0 / n_t + 1.0 / n_g))
        if se == 0.0:
            per_bin.append(BinStat(c_t, c_g, 0.0, False))
            continue
        z = float((p_g - p_t) / se)
        sig = z < z_crit
        significant += int(sig)
        per_bin.append(BinStat(c_t, c_g, z, sig))
    return ModeReport(k=k, significant_bins=significant, skipped_bins=skipped, per_bin=per_bin)


def singular_spectrum(net: MlpParams) -> list[np.ndarray]:
    """Descending singular values of every weight matrix."""
    return [svd(w).sigma for w in net.weights]


def conv_spectrum(tensors) -> list[np.ndarray]:
    """Spectra of convolution weights after kernel-per-column reshaping."""
    return [svd(reshape_conv(t)).sigma for t in tensors]


def exact_w1(x: np.ndarray, y: np.ndarray) -> float:
    """Exact 1-Wasserstein distance between two equal-weight empirical
    measures: min-cost perfect matching under Euclidean cost, divided by n.

    Capped at n <= 256 samples to keep the O(n^3) assignment solve trivial.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"sample sets must have equal shape, got {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n > 256:
        raise ValueError(f"exact_w1 is capped at 256 samples, got {n}")
    cost = scipy.spatial.distance.cdist(x, y)
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / n)
