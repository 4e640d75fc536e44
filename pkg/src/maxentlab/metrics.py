"""Divergence, dispersion, and aggregation statistics.

Categorical and diagonal-Gaussian KL, expectiles, inter-run variability,
cumulative action distance, IQM with bootstrap confidence intervals, and
correlation diagnostics.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateInputError

log = logging.getLogger(__name__)

# Protocol constant: actor log-std is clamped to this range so the
# closed-form Gaussian KL stays finite.
LOG_STD_MIN = -20.0
LOG_STD_MAX = 5.0

EXPECTILE_TOL = 1e-10


def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError(f"{name} must be a 1-D probability vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} does not sum to 1")
    return p


def kl_categorical(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with 0*log(0) := 0; returns +inf when q=0 where p>0."""
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError("p and q must have the same length")
    support = p > 0
    if np.any(q[support] == 0):
        return float("inf")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def symmetric_kl_categorical(p: np.ndarray, q: np.ndarray) -> float:
    """0.5 * [KL(p||q) + KL(q||p)]."""
    return 0.5 * (kl_categorical(p, q) + kl_categorical(q, p))


@dataclass
class DiagGaussian:
    """Diagonal Gaussian given by mean and log standard deviation."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        log_std = np.atleast_1d(np.asarray(self.log_std, dtype=float))
        if self.mean.shape != log_std.shape:
            raise ValueError("mean and log_std must have the same shape")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(log_std))):
            raise ValueError("DiagGaussian parameters must be finite")
        self.log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal((size, self.mean.size))

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = (x - self.mean) / self.std
        return (-0.5 * z ** 2 - self.log_std - 0.5 * np.log(2.0 * np.pi)).sum(axis=1)


def kl_diag_gaussian(a: DiagGaussian, b: DiagGaussian) -> float:
    """Closed-form KL(a || b) summed over dimensions."""
    if a.mean.shape != b.mean.shape:
        raise ValueError("dimension mismatch between Gaussians")
    sa, sb = a.std, b.std
    per_dim = (b.log_std - a.log_std
               + (sa ** 2 + (a.mean - b.mean) ** 2) / (2.0 * sb ** 2)
               - 0.5)
    return float(per_dim.sum())


def symmetric_kl_diag_gaussian(a: DiagGaussian, b: DiagGaussian) -> float:
    return 0.5 * (kl_diag_gaussian(a, b) + kl_diag_gaussian(b, a))


def _expectile_residual(m: np.ndarray, x: np.ndarray, tau: float,
                        w: np.ndarray) -> np.ndarray:
    """tau * sum_{x>m} w(x-m) - (1-tau) * sum_{x<=m} w(m-x), rows of x vs entries of m."""
    above = np.maximum(x - m[:, None], 0.0)
    below = np.maximum(m[:, None] - x, 0.0)
    return tau * (w * above).sum(axis=1) - (1.0 - tau) * (w * below).sum(axis=1)


def expectile_rows(x: np.ndarray, tau: float,
                   weights: np.ndarray | None = None) -> np.ndarray:
    """Row-wise tau-expectile by bisection on the monotone residual.

    Optional non-negative weights generalize the sample expectile to a
    weighted (distributional) one; default is equal weighting.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError("expectile requires a non-empty 2-D sample matrix")
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must lie in (0, 1)")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != x.shape or np.any(w < 0):
        raise ValueError("weights must be non-negative and match the sample shape")
    lo = x.min(axis=1).copy()
    hi = x.max(axis=1).copy()
    # The residual is strictly decreasing in m, positive at min(x) and
    # negative at max(x) (unless all samples coincide).
    while np.max(hi - lo) > EXPECTILE_TOL:
        mid = 0.5 * (lo + hi)
        pos = _expectile_residual(mid, x, tau, w) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


def expectile(samples, tau: float, weights=None) -> float:
    """The tau-expectile: the unique root of the asymmetric first-order condition."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or samples.size == 0:
        raise ValueError("samples must be a non-empty 1-D list")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    w = None if weights is None else np.asarray(weights, dtype=float)[None, :]
    return float(expectile_rows(samples[None, :], tau, w)[0])


@dataclass
class EvalStateSet:
    """Shared state collection on which every policy pair is compared."""

    states: np.ndarray  # (n_states, feature_dim)
    provenance: str = ""

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] == 0:
            raise ValueError("evaluation state set must be non-empty")

    def __len__(self) -> int:
        return self.states.shape[0]


def inter_run_variability(policies: list, divergence) -> float:
    """Mean pairwise divergence over all ordered policy pairs.

    Each policy is a sequence of per-state distributions, all evaluated on the
    same state collection; ``divergence`` compares two such pointwise
    distributions. Non-finite pointwise divergences are excluded with a
    logged count.
    """
    if len(policies) < 2:
        raise ValueError("inter_run_variability needs at least 2 policies")
    n_states = len(policies[0])
    if any(len(p) != n_states for p in policies):
        raise ValueError("all policies must be evaluated on the same state set")
    total = 0.0
    n_pairs = 0
    n_dropped = 0
    for i in range(len(policies)):
        for j in range(len(policies)):
            if i == j:
                continue
            vals = np.array([divergence(policies[i][s], policies[j][s])
                             for s in range(n_states)])
            finite = np.isfinite(vals)
            n_dropped += int((~finite).sum())
            if finite.any():
                total += float(vals[finite].mean())
            n_pairs += 1
    if n_dropped:
        log.warning("inter_run_variability dropped %d non-finite pointwise divergences",
                    n_dropped)
    return total / n_pairs


def categorical_policy_variability(prob_tables: list[np.ndarray]) -> float:
    """Inter-run variability for categorical policies given (state, action) tables."""
    policies = [[table[s] for s in range(table.shape[0])] for table in prob_tables]
    return inter_run_variability(policies, symmetric_kl_categorical)


def gaussian_policy_variability(actors: list, states: EvalStateSet) -> float:
    """Inter-run variability for Gaussian heads evaluated on a shared state set.

    Each actor maps a state feature vector to a DiagGaussian.
    """
    policies = [[actor(s) for s in states.states] for actor in actors]
    return inter_run_variability(policies, symmetric_kl_diag_gaussian)


def cumulative_action_distance(rollouts: np.ndarray) -> float:
    """Sum over timesteps of the mean pairwise L2 distance between policies' actions.

    rollouts has shape (num_policies, T, action_dim).
    """
    rollouts = np.asarray(rollouts, dtype=float)
    if rollouts.ndim != 3:
        raise ValueError("rollouts must have shape (num_policies, T, action_dim)")
    n = rollouts.shape[0]
    if n < 2:
        raise ValueError("need at least 2 policies")
    total = 0.0
    n_pairs = n * (n - 1) // 2
    for i in range(n):
        for j in range(i + 1, n):
            d = np.linalg.norm(rollouts[i] - rollouts[j], axis=1)  # (T,)
            total += d.sum()
    return total / n_pairs


@dataclass
class AggregateSummary:
    iqm: float
    ci_low: float
    ci_high: float
    num_bootstrap: int
    confidence: float

    def __post_init__(self):
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must lie in (0, 1)")
        if not (self.ci_low <= self.iqm <= self.ci_high):
            raise ValueError("CI must contain the IQM")


def _iqm(values: np.ndarray) -> float:
    # Keep values between the interpolated 25th and 75th percentiles inclusive.
    q25, q75 = np.percentile(values, [25.0, 75.0])
    kept = values[(values >= q25) & (values <= q75)]
    return float(kept.mean())


def iqm_with_bootstrap(values, confidence: float = 0.95,
                       num_resamples: int = 2000,
                       seed: int = 0) -> AggregateSummary:
    """Interquartile mean with a seeded percentile-bootstrap CI."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 4:
        raise ValueError("iqm_with_bootstrap needs at least 4 values")
    rng = np.random.default_rng(seed)
    point = _iqm(values)
    resampled = np.empty(num_resamples)
    for b in range(num_resamples):
        resampled[b] = _iqm(rng.choice(values, size=values.size, replace=True))
    lo_pct = 100.0 * (1.0 - confidence) / 2.0
    ci_low, ci_high = np.percentile(resampled, [lo_pct, 100.0 - lo_pct])
    return AggregateSummary(iqm=point, ci_low=float(ci_low), ci_high=float(ci_high),
                            num_bootstrap=num_resamples, confidence=confidence)


def correlation(x, y, kind: str = "pearson") -> float:
    """Pearson or Spearman correlation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise ValueError("correlation needs two equal-length series of length >= 3")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInputError("correlation input series is constant")
    if kind == "pearson":
        return float(stats.pearsonr(x, y).statistic)
    if kind == "spearman":
        return float(stats.spearmanr(x, y).statistic)
    raise ValueError(f"unknown correlation kind {kind!r}")
