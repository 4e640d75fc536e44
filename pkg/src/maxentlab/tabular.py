"""Sampled soft Q-learning with double tabular critics on finite MDPs.

Supports fixed-temperature, target-entropy, and expectile-disagreement
temperature variants, run across seeds to measure inter-run variability and
the early-disagreement correlation diagnostic at desk scale.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .mdp import (CategoricalPolicy, FiniteMdp, QTable, boltzmann_policy,
                  greedy_policy, policy_return)
from .metrics import categorical_policy_variability, correlation, expectile_rows
from .temperature import (QedConfig, TargetEntropyState,
                          default_target_entropy_categorical,
                          update_target_entropy_alpha)

LOG_EVERY = 100
EARLY_WINDOW_FRACTION = 0.3
CRITIC_INIT_SCALE = 0.1


@dataclass
class DoubleCritic:
    q1: QTable
    q2: QTable

    def __post_init__(self):
        if self.q1.values.shape != self.q2.values.shape:
            raise ValueError("double critics must have matching shapes")

    @property
    def q_min(self) -> np.ndarray:
        return np.minimum(self.q1.values, self.q2.values)

    @property
    def disagreement(self) -> np.ndarray:
        return np.abs(self.q1.values - self.q2.values)


class ReplayBuffer:
    """Fixed-capacity ring of (s, a, r, s') transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data = np.zeros((capacity, 4))
        self.insertions = 0

    def __len__(self) -> int:
        return min(self.insertions, self.capacity)

    def add(self, s: int, a: int, r: float, s_next: int):
        self._data[self.insertions % self.capacity] = (s, a, r, s_next)
        self.insertions += 1

    def sample(self, batch_size: int, rng: np.random.Generator):
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self), size=batch_size)
        batch = self._data[idx]
        return (batch[:, 0].astype(int), batch[:, 1].astype(int),
                batch[:, 2], batch[:, 3].astype(int))

    def contents(self):
        return self._data[:len(self)].copy()


@dataclass(frozen=True)
class LearnerConfig:
    """Configuration of one tabular learner run."""

    variant: str = "fixed-alpha"    # fixed-alpha | target-entropy | qed
    alpha: float = 0.05             # fixed temperature / floor for qed
    qed: QedConfig | None = None
    qed_exact_expectile: bool = False
    qed_floor: str = "fixed"        # fixed | target-entropy
    learning_rate: float = 0.1
    steps: int = 2000
    batch_size: int = 32
    replay_capacity: int = 10_000
    te_step_size: float = 1e-2
    te_initial_alpha: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("fixed-alpha", "target-entropy", "qed"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.batch_size < 1 or self.replay_capacity < 1:
            raise ValueError("batch_size and replay_capacity must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.variant == "qed" and self.qed is None:
            object.__setattr__(self, "qed", QedConfig())
        if self.qed_floor not in ("fixed", "target-entropy"):
            raise ValueError(f"unknown qed_floor {self.qed_floor!r}")


@dataclass
class RunRecord:
    """Logged time series and final artifacts of one learner run."""

    steps: list[int] = field(default_factory=list)
    disagreement_mean: list[float] = field(default_factory=list)
    alpha_mean: list[float] = field(default_factory=list)
    alpha_max_state: list[float] = field(default_factory=list)
    return_greedy: list[float] = field(default_factory=list)
    return_soft: list[float] = field(default_factory=list)
    final_policy: CategoricalPolicy | None = None
    final_q1: QTable | None = None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "disagreement_mean", "alpha_mean",
                             "alpha_max_state", "return_greedy", "return_soft"])
            for i in range(len(self.steps)):
                writer.writerow([self.steps[i],
                                 repr(self.disagreement_mean[i]),
                                 repr(self.alpha_mean[i]),
                                 repr(self.alpha_max_state[i]),
                                 repr(self.return_greedy[i]),
                                 repr(self.return_soft[i])])

    def final_policy_json(self) -> str:
        return json.dumps({"probs": self.final_policy.probs.tolist()})


def _sample_actions_per_state(probs: np.ndarray, n: int,
                              rng: np.random.Generator) -> np.ndarray:
    """Draw n categorical actions per state via inverse-CDF, vectorized."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], n))
    return (u[:, :, None] > cdf[:, None, :]).sum(axis=2)


def soft_target(q_min: np.ndarray, s: np.ndarray, a: np.ndarray,
                r: np.ndarray, s_next: np.ndarray, alpha_next: np.ndarray,
                gamma: float) -> np.ndarray:
    """r + gamma * alpha(s') * logsumexp(min(q1,q2)(s',.) / alpha(s'))."""
    num_states, num_actions = q_min.shape
    if (np.any(s < 0) or np.any(s >= num_states)
            or np.any(s_next < 0) or np.any(s_next >= num_states)):
        raise ValueError("transition state index out of range")
    if np.any(a < 0) or np.any(a >= num_actions):
        raise ValueError("transition action index out of range")
    if np.any(alpha_next <= 0):
        raise ValueError("temperatures must be positive")
    z = q_min[s_next] / alpha_next[:, None]
    m = z.max(axis=1)
    v_soft = alpha_next * (np.log(np.exp(z - m[:, None]).sum(axis=1)) + m)
    return r + gamma * v_soft


def td_update(q_values: np.ndarray, s: np.ndarray, a: np.ndarray,
              target: np.ndarray, lr: float) -> None:
    """In-place accumulated TD step toward the given targets.

    TD errors are computed against the pre-update table, then accumulated
    (repeated (s, a) pairs in the batch each contribute their own error).
    """
    td = target - q_values[s, a]
    np.add.at(q_values, (s, a), lr * td)


def soft_q_update(critics: DoubleCritic, s: np.ndarray, a: np.ndarray,
                  r: np.ndarray, s_next: np.ndarray, alpha_next: np.ndarray,
                  gamma: float, lr: float) -> None:
    """In-place TD step of both critics on one batch toward the shared soft
    target (computed from the pre-update min table)."""
    target = soft_target(critics.q_min, s, a, r, s_next, alpha_next, gamma)
    td_update(critics.q1.values, s, a, target, lr)
    td_update(critics.q2.values, s, a, target, lr)


class _AlphaSchedule:
    """Per-state temperature for one learner, by variant."""

    def __init__(self, config: LearnerConfig, mdp: FiniteMdp):
        self.config = config
        self.mdp = mdp
        self.te_state = TargetEntropyState(
            log_alpha=float(np.log(config.te_initial_alpha)),
            target_entropy=default_target_entropy_categorical(mdp.num_actions),
            step_size=config.te_step_size)

    def alpha_vector(self, critics: DoubleCritic, policy_probs: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
        cfg = self.config
        if cfg.variant == "fixed-alpha":
            return np.full(self.mdp.num_states, cfg.alpha)
        if cfg.variant == "target-entropy":
            return np.full(self.mdp.num_states, self.te_state.alpha)
        qed = cfg.qed
        diff = critics.disagreement
        if cfg.qed_exact_expectile:
            deltas = expectile_rows(diff, qed.tau, weights=policy_probs)
        else:
            acts = _sample_actions_per_state(policy_probs, qed.num_action_samples, rng)
            sampled = np.take_along_axis(diff, acts, axis=1)
            deltas = expectile_rows(sampled, qed.tau)
        floor = (self.te_state.alpha if cfg.qed_floor == "target-entropy"
                 else cfg.alpha)
        floor = min(floor, qed.alpha_max)
        raw = deltas / (qed.k * qed.action_dim)
        return np.clip(raw, floor, qed.alpha_max)

    def observe_log_probs(self, log_probs: np.ndarray):
        if (self.config.variant == "target-entropy"
                or (self.config.variant == "qed"
                    and self.config.qed_floor == "target-entropy")):
            self.te_state = update_target_entropy_alpha(self.te_state, log_probs)


def _policy_table(q_min: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return np.stack([boltzmann_policy(q_min[s], alpha[s])
                     for s in range(q_min.shape[0])])


def run_learner(mdp: FiniteMdp, config: LearnerConfig) -> RunRecord:
    """Train double tabular critics with the configured temperature variant."""
    rng = np.random.default_rng(config.seed)
    critics = DoubleCritic(
        QTable(rng.uniform(0, CRITIC_INIT_SCALE, (mdp.num_states, mdp.num_actions))),
        QTable(rng.uniform(0, CRITIC_INIT_SCALE, (mdp.num_states, mdp.num_actions))))
    buffer = ReplayBuffer(config.replay_capacity)
    schedule = _AlphaSchedule(config, mdp)
    record = RunRecord()
    uniform_init = np.full(mdp.num_states, 1.0 / mdp.num_states)

    state = int(rng.integers(mdp.num_states))
    policy_probs = _policy_table(critics.q_min, np.full(mdp.num_states, config.alpha))
    alpha_vec = schedule.alpha_vector(critics, policy_probs, rng)

    for step in range(1, config.steps + 1):
        policy_probs = _policy_table(critics.q_min, alpha_vec)
        # Behavior: Boltzmann at the current temperature (on-policy exploration).
        a = int(rng.choice(mdp.num_actions, p=policy_probs[state]))
        r = float(mdp.reward[state, a])
        s_next = int(rng.choice(mdp.num_states, p=mdp.transition[state, a]))
        buffer.add(state, a, r, s_next)
        state = s_next

        # Each critic learns from its own independently sampled batch, so the
        # double-critic disagreement tracks TD-target noise rather than only
        # the decaying initialization gap.
        q_min_pre = critics.q_min
        bs, ba, br, bs2 = buffer.sample(config.batch_size, rng)
        target1 = soft_target(q_min_pre, bs, ba, br, bs2, alpha_vec[bs2],
                              mdp.discount)
        cs, ca, cr, cs2 = buffer.sample(config.batch_size, rng)
        target2 = soft_target(q_min_pre, cs, ca, cr, cs2, alpha_vec[cs2],
                              mdp.discount)
        td_update(critics.q1.values, bs, ba, target1, config.learning_rate)
        td_update(critics.q2.values, cs, ca, target2, config.learning_rate)
        schedule.observe_log_probs(np.log(policy_probs[bs, ba] + 1e-300))
        alpha_vec = schedule.alpha_vector(critics, policy_probs, rng)

        if step % LOG_EVERY == 0 or step == config.steps:
            record.steps.append(step)
            record.disagreement_mean.append(float(critics.disagreement.mean()))
            record.alpha_mean.append(float(alpha_vec.mean()))
            record.alpha_max_state.append(float(alpha_vec.max()))
            q_min = QTable(critics.q_min)
            record.return_greedy.append(
                policy_return(mdp, greedy_policy(q_min), uniform_init))
            soft_policy = CategoricalPolicy(_policy_table(q_min.values, alpha_vec))
            record.return_soft.append(policy_return(mdp, soft_policy, uniform_init))

    record.final_q1 = critics.q1.copy()
    record.final_policy = CategoricalPolicy(_policy_table(critics.q_min, alpha_vec))
    return record


def evaluation_state_set(mdp: FiniteMdp, records: list[RunRecord],
                         eval_seed: int, rollout_steps: int = 50) -> np.ndarray:
    """Union of states visited while rolling out each final policy."""
    rng = np.random.default_rng(eval_seed)
    visited: set[int] = set()
    for rec in records:
        s = int(rng.integers(mdp.num_states))
        for _ in range(rollout_steps):
            visited.add(s)
            a = int(rng.choice(mdp.num_actions, p=rec.final_policy.probs[s]))
            s = int(rng.choice(mdp.num_states, p=mdp.transition[s, a]))
    return np.array(sorted(visited), dtype=int)


def seed_sweep(mdp: FiniteMdp, config: LearnerConfig, seeds: list[int],
               eval_seed: int = 10_000):
    """Run independent learners and measure inter-run variability of the
    final Boltzmann policies on the shared evaluation state set."""
    if len(seeds) < 2:
        raise ValueError("seed_sweep needs at least 2 seeds")
    from dataclasses import replace
    records = [run_learner(mdp, replace(config, seed=s)) for s in seeds]
    states = evaluation_state_set(mdp, records, eval_seed)
    tables = [rec.final_policy.probs[states] for rec in records]
    v = categorical_policy_variability(tables)
    return records, v


@dataclass
class CorrelationStudyResult:
    r: float
    r_squared: float
    early_disagreement: np.ndarray
    cross_seed_dispersion: np.ndarray

    def scatter_rows(self):
        return [(i, float(self.early_disagreement[i]),
                 float(self.cross_seed_dispersion[i]))
                for i in range(self.early_disagreement.size)]


def disagreement_correlation_study(mdps: list[FiniteMdp], config: LearnerConfig,
                                   seeds: list[int]) -> CorrelationStudyResult:
    """Does early within-run double-critic disagreement predict cross-seed
    dispersion of the learned values? One point per MDP."""
    if len(seeds) < 3:
        raise ValueError("correlation study needs at least 3 seeds")
    from dataclasses import replace
    early, dispersion = [], []
    for mdp in mdps:
        records = [run_learner(mdp, replace(config, seed=s)) for s in seeds]
        cutoff = max(1, int(EARLY_WINDOW_FRACTION * config.steps))
        early_vals = []
        for rec in records:
            window = [d for st, d in zip(rec.steps, rec.disagreement_mean)
                      if st <= cutoff]
            early_vals.append(float(np.mean(window)) if window
                              else rec.disagreement_mean[0])
        early.append(float(np.mean(early_vals)))
        means = [float(rec.final_q1.values.mean()) for rec in records]
        dispersion.append(float(np.std(means)))
    early_arr = np.array(early)
    disp_arr = np.array(dispersion)
    r = correlation(early_arr, disp_arr, "pearson")
    return CorrelationStudyResult(r=r, r_squared=r * r,
                                  early_disagreement=early_arr,
                                  cross_seed_dispersion=disp_arr)
