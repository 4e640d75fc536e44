"""Practical disagreement-scaled temperature schedule.

The schedule draws N actions from the current policy, takes an upper
expectile of the absolute double-critic differences, divides by k times the
action dimension, and clips the result between a floor and a ceiling. The
floor defaults to the temperature learned by target-entropy tuning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .metrics import expectile


@dataclass(frozen=True)
class QedConfig:
    """Parameters of the expectile-disagreement temperature schedule."""

    k: float = 0.4                 # aggressiveness divisor
    tau: float = 0.9               # expectile level
    num_action_samples: int = 8    # N
    alpha_max: float = 0.2
    action_dim: int = 1

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")
        if not (0.5 < self.tau < 1.0):
            raise ValueError("tau must lie in (0.5, 1)")
        if self.num_action_samples < 1:
            raise ValueError("num_action_samples must be at least 1")
        if self.alpha_max <= 0:
            raise ValueError("alpha_max must be positive")
        if self.action_dim < 1:
            raise ValueError("action_dim must be positive")


def sample_disagreement(critic1, critic2, state, policy, config: QedConfig,
                        rng: np.random.Generator) -> float:
    """Upper expectile of |Q1(s,a_i) - Q2(s,a_i)| over N policy-sampled actions.

    ``critic1``/``critic2`` evaluate (state, action) -> value; ``policy``
    samples an action given (state, rng).
    """
    actions = [policy(state, rng) for _ in range(config.num_action_samples)]
    diffs = np.array([abs(critic1(state, a) - critic2(state, a)) for a in actions])
    return expectile(diffs, config.tau)


def alpha_qed(disagreement: float, config: QedConfig, alpha_min: float) -> float:
    """clip(disagreement / (k * action_dim), alpha_min, alpha_max)."""
    if disagreement < 0 or not math.isfinite(disagreement):
        raise ValueError("disagreement must be a finite non-negative real")
    if alpha_min <= 0:
        raise ValueError("alpha_min must be positive")
    if alpha_min > config.alpha_max:
        raise ValueError("alpha_min must not exceed alpha_max")
    raw = disagreement / (config.k * config.action_dim)
    return float(min(max(raw, alpha_min), config.alpha_max))


@dataclass(frozen=True)
class TargetEntropyState:
    """Learned log-temperature driven toward a fixed target entropy."""

    log_alpha: float = 0.0
    target_entropy: float = 0.0
    step_size: float = 1e-3

    def __post_init__(self):
        if not math.isfinite(self.log_alpha):
            raise ValueError("log_alpha must be finite")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)


def default_target_entropy_continuous(action_dim: int) -> float:
    """Conventional target entropy for continuous actors: -action_dim."""
    return -float(action_dim)


def default_target_entropy_categorical(num_actions: int) -> float:
    """Tabular default: half the entropy of the uniform distribution."""
    return 0.5 * math.log(num_actions)


def update_target_entropy_alpha(state: TargetEntropyState,
                                batch_log_probs) -> TargetEntropyState:
    """One gradient step on log_alpha for the loss E[alpha * (-log pi - H_target)].

    The gradient w.r.t. log_alpha is alpha * mean(-log pi - H_target), so
    log_alpha decreases when batch entropy exceeds the target and increases
    otherwise.
    """
    log_probs = np.asarray(batch_log_probs, dtype=float)
    if log_probs.size == 0:
        raise ValueError("batch_log_probs must be non-empty")
    if not np.all(np.isfinite(log_probs)):
        raise ValueError("batch_log_probs must be finite")
    grad = state.alpha * float(np.mean(-log_probs - state.target_entropy))
    return replace(state, log_alpha=state.log_alpha - state.step_size * grad)
