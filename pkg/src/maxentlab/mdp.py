"""Finite MDPs, Boltzmann policies, and hard/soft Bellman operators.

All operators are pure functions over dense numpy arrays. Transition tensors
are indexed P[s, a, s'] and rewards r[s, a].
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12

# Default stopping parameters for value iteration. The fixed point is used as
# an oracle in bound checks, so it must be far more accurate than the bounds
# under test.
VI_DEFAULT_TOL = 1e-10
VI_DEFAULT_MAX_ITERS = 100_000


@dataclass(frozen=True)
class FiniteMdp:
    """Finite state/action model with dense transition kernel and rewards."""

    num_states: int
    num_actions: int
    transition: np.ndarray  # (S, A, S), row-stochastic over the last axis
    reward: np.ndarray      # (S, A)
    discount: float

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise ValueError("num_states and num_actions must be positive")
        P = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        if P.shape != (self.num_states, self.num_actions, self.num_states):
            raise ValueError(f"transition shape {P.shape} does not match "
                             f"({self.num_states}, {self.num_actions}, {self.num_states})")
        if r.shape != (self.num_states, self.num_actions):
            raise ValueError(f"reward shape {r.shape} does not match "
                             f"({self.num_states}, {self.num_actions})")
        if np.any(P < 0):
            raise ValueError("transition kernel has negative entries")
        row_sums = P.sum(axis=2)
        if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOL):
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must lie strictly inside (0, 1)")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)

    def to_json(self) -> str:
        doc = {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "discount": self.discount,
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "FiniteMdp":
        doc = json.loads(text)
        return cls(
            num_states=doc["num_states"],
            num_actions=doc["num_actions"],
            transition=np.asarray(doc["transition"], dtype=float),
            reward=np.asarray(doc["reward"], dtype=float),
            discount=float(doc["discount"]),
        )


@dataclass
class QTable:
    """Dense action-value table, one scalar per (state, action)."""

    values: np.ndarray  # (S, A)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("QTable values must be a 2-D (state, action) matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("QTable entries must be finite")

    def copy(self) -> "QTable":
        return QTable(self.values.copy())

    @classmethod
    def zeros(cls, mdp: FiniteMdp) -> "QTable":
        return cls(np.zeros((mdp.num_states, mdp.num_actions)))


@dataclass
class CategoricalPolicy:
    """Per-state action distribution."""

    probs: np.ndarray  # (S, A)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 2:
            raise ValueError("policy probs must be a 2-D (state, action) matrix")
        if np.any(self.probs < 0):
            raise ValueError("policy probabilities must be non-negative")
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("each policy row must sum to 1 within 1e-12")


@dataclass
class TemperatureField:
    """Per-state temperature with a floor and optional ceiling."""

    alpha: np.ndarray  # (S,), each > 0
    alpha_min: float
    alpha_max: float | None = None
    kappa: float = 1.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha_min <= 0:
            raise ValueError("alpha_min must be positive")
        if self.alpha_max is not None and self.alpha_max <= self.alpha_min:
            raise ValueError("alpha_max must exceed alpha_min")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if np.any(self.alpha < self.alpha_min - 1e-15):
            raise ValueError("alpha must respect the alpha_min floor")
        if self.alpha_max is not None and np.any(self.alpha > self.alpha_max + 1e-15):
            raise ValueError("alpha must respect the alpha_max ceiling")

    @classmethod
    def constant(cls, num_states: int, alpha: float) -> "TemperatureField":
        return cls(alpha=np.full(num_states, float(alpha)), alpha_min=float(alpha))


def boltzmann_policy(q_row: np.ndarray, alpha: float) -> np.ndarray:
    """softmax(q_row / alpha), stable via max-subtraction."""
    q_row = np.asarray(q_row, dtype=float)
    if not np.all(np.isfinite(q_row)):
        raise ValueError("q_row must be finite")
    if not (alpha > 0):
        raise ValueError("alpha must be positive")
    z = q_row / alpha
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _stable_logsumexp(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    out = np.log(np.exp(z - m).sum(axis=axis)) + np.squeeze(m, axis=axis)
    return out


def soft_state_values(q: QTable, temps: TemperatureField) -> np.ndarray:
    """V(s) = alpha(s) * logsumexp(Q(s,.)/alpha(s))."""
    alpha = temps.alpha
    if np.any(alpha <= 0):
        raise ValueError("temperatures must be positive")
    return alpha * _stable_logsumexp(q.values / alpha[:, None], axis=1)


def hard_bellman(mdp: FiniteMdp, q: QTable) -> QTable:
    """Unregularized optimality backup: r + gamma * E[max_a' Q(s', a')]."""
    _check_shape(mdp, q)
    v = q.values.max(axis=1)
    return QTable(mdp.reward + mdp.discount * mdp.transition @ v)


def soft_bellman(mdp: FiniteMdp, q: QTable, temps: TemperatureField) -> QTable:
    """Entropy-regularized backup with state-dependent temperature."""
    _check_shape(mdp, q)
    if temps.alpha.shape != (mdp.num_states,):
        raise ValueError("temperature field shape does not match the MDP")
    v = soft_state_values(q, temps)
    return QTable(mdp.reward + mdp.discount * mdp.transition @ v)


def _check_shape(mdp: FiniteMdp, q: QTable):
    if q.values.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"QTable shape {q.values.shape} does not match MDP "
                         f"({mdp.num_states}, {mdp.num_actions})")


@dataclass
class ValueIterationResult:
    q: QTable
    iterations: int
    converged: bool
    final_residual: float


def value_iteration(mdp: FiniteMdp, operator: str = "hard",
                    temps: TemperatureField | None = None,
                    tol: float = VI_DEFAULT_TOL,
                    max_iters: int = VI_DEFAULT_MAX_ITERS,
                    q_init: QTable | None = None) -> ValueIterationResult:
    """Iterate the chosen backup to a fixed point.

    operator is "hard" or "soft"; the soft variant requires a fixed
    TemperatureField. Non-convergence is reported, not raised.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if operator == "hard":
        step = lambda q: hard_bellman(mdp, q)
    elif operator == "soft":
        if temps is None:
            raise ValueError("soft value iteration requires a TemperatureField")
        step = lambda q: soft_bellman(mdp, q, temps)
    else:
        raise ValueError(f"unknown operator {operator!r}")

    q = q_init.copy() if q_init is not None else QTable.zeros(mdp)
    residual = np.inf
    for it in range(1, max_iters + 1):
        q_next = step(q)
        residual = float(np.max(np.abs(q_next.values - q.values)))
        q = q_next
        if residual < tol:
            return ValueIterationResult(q, it, True, residual)
    return ValueIterationResult(q, max_iters, False, residual)


def policy_return(mdp: FiniteMdp, policy: CategoricalPolicy,
                  initial_dist: np.ndarray) -> float:
    """Exact expected discounted return via linear policy evaluation."""
    initial_dist = np.asarray(initial_dist, dtype=float)
    if initial_dist.shape != (mdp.num_states,):
        raise ValueError("initial_dist shape does not match the MDP")
    if np.any(initial_dist < 0) or abs(initial_dist.sum() - 1.0) > 1e-9:
        raise ValueError("initial_dist must be a probability distribution")
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError("policy shape does not match the MDP")
    r_pi = (policy.probs * mdp.reward).sum(axis=1)
    p_pi = np.einsum("sa,sap->sp", policy.probs, mdp.transition)
    v = np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * p_pi, r_pi)
    return float(initial_dist @ v)


def greedy_policy(q: QTable) -> CategoricalPolicy:
    """Deterministic argmax policy (ties broken toward the lowest index)."""
    probs = np.zeros_like(q.values)
    probs[np.arange(q.values.shape[0]), q.values.argmax(axis=1)] = 1.0
    return CategoricalPolicy(probs)


def boltzmann_policy_table(q: QTable, alpha: np.ndarray | float) -> CategoricalPolicy:
    """Row-wise Boltzmann policy at scalar or per-state temperature."""
    alpha_vec = np.broadcast_to(np.asarray(alpha, dtype=float), (q.values.shape[0],))
    probs = np.stack([boltzmann_policy(q.values[s], float(alpha_vec[s]))
                      for s in range(q.values.shape[0])])
    return CategoricalPolicy(probs)


def random_mdp(num_states: int, num_actions: int, discount: float,
               rng: np.random.Generator) -> FiniteMdp:
    """Seeded random MDP: Dirichlet(1,...,1) rows, rewards uniform in [0, 1]."""
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    # Dirichlet rows can miss exact normalization at the 1e-16 level.
    P = P / P.sum(axis=2, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
    return FiniteMdp(num_states, num_actions, P, r, discount)
