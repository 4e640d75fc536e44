"""Coupled soft value iteration with a shared disagreement-scaled temperature.

Two Q-iterates are advanced by the same soft backup whose per-state
temperature is max(alpha_min, ||Q1(s,.) - Q2(s,.)||_inf / kappa). The trace
records everything needed to check the pairwise-KL and convergence bounds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import (FiniteMdp, QTable, TemperatureField, boltzmann_policy,
                  soft_bellman, value_iteration)
from .metrics import symmetric_kl_categorical, kl_categorical


def disagreement_temperature(q1_row: np.ndarray, q2_row: np.ndarray,
                             kappa: float, alpha_min: float) -> float:
    """max(alpha_min, ||q1_row - q2_row||_inf / kappa)."""
    q1_row = np.asarray(q1_row, dtype=float)
    q2_row = np.asarray(q2_row, dtype=float)
    if q1_row.shape != q2_row.shape:
        raise ValueError("q rows must have the same length")
    if not (np.all(np.isfinite(q1_row)) and np.all(np.isfinite(q2_row))):
        raise ValueError("q rows must be finite")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if alpha_min <= 0:
        raise ValueError("alpha_min must be positive")
    return max(alpha_min, float(np.max(np.abs(q1_row - q2_row))) / kappa)


def shared_temperature_field(q1: QTable, q2: QTable, kappa: float,
                             alpha_min: float) -> TemperatureField:
    """Per-state disagreement temperature as a TemperatureField (no ceiling)."""
    disagreement = np.max(np.abs(q1.values - q2.values), axis=1)
    alpha = np.maximum(alpha_min, disagreement / kappa)
    return TemperatureField(alpha=alpha, alpha_min=alpha_min, kappa=kappa)


@dataclass
class CoupledState:
    q1: QTable
    q2: QTable
    iteration: int = 0
    initial_disagreement: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.q1.values.shape != self.q2.values.shape:
            raise ValueError("coupled QTables must share one MDP's shape")
        if self.initial_disagreement is None:
            self.initial_disagreement = float(
                np.max(np.abs(self.q1.values - self.q2.values)))

    @property
    def disagreement(self) -> float:
        return float(np.max(np.abs(self.q1.values - self.q2.values)))


def coupled_step(state: CoupledState, mdp: FiniteMdp, kappa: float,
                 alpha_min: float):
    """One shared-temperature soft backup of both iterates.

    Returns (next_state, per-state alpha, per-state symmetric KL between the
    Boltzmann policies of the current iterates at the shared temperature).
    """
    temps = shared_temperature_field(state.q1, state.q2, kappa, alpha_min)
    sym_kl = np.array([
        symmetric_kl_categorical(
            boltzmann_policy(state.q1.values[s], temps.alpha[s]),
            boltzmann_policy(state.q2.values[s], temps.alpha[s]))
        for s in range(mdp.num_states)
    ])
    q1_next = soft_bellman(mdp, state.q1, temps)
    q2_next = soft_bellman(mdp, state.q2, temps)
    next_state = CoupledState(q1_next, q2_next, state.iteration + 1,
                              state.initial_disagreement)
    return next_state, temps.alpha, sym_kl


def thm2_bound(t: int, e0: float, delta0: float, gamma: float, kappa: float,
               alpha_min: float, num_actions: int) -> float:
    """Error bound for the coupled iterates at step t.

    gamma^t * e0 + gamma * alpha_min * log|A| / (1 - gamma) * (1 - gamma^t)
    + delta0 * log|A| / kappa * t * gamma^t.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if e0 < 0 or delta0 < 0:
        raise ValueError("e0 and delta0 must be non-negative")
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    if kappa <= 0 or alpha_min <= 0:
        raise ValueError("kappa and alpha_min must be positive")
    if num_actions < 1:
        raise ValueError("num_actions must be positive")
    log_a = math.log(num_actions)
    gt = gamma ** t
    return (gt * e0
            + gamma * alpha_min * log_a / (1.0 - gamma) * (1.0 - gt)
            + delta0 * log_a / kappa * t * gt)


@dataclass
class IterationTrace:
    """Per-iteration diagnostics of one coupled run."""

    iterations: list[int] = field(default_factory=list)
    disagreement: list[float] = field(default_factory=list)
    alpha: list[np.ndarray] = field(default_factory=list)
    kl_12: list[np.ndarray] = field(default_factory=list)
    kl_21: list[np.ndarray] = field(default_factory=list)
    kl_sym: list[np.ndarray] = field(default_factory=list)
    err_run1: list[float] = field(default_factory=list)
    err_run2: list[float] = field(default_factory=list)
    bound_run1: list[float] = field(default_factory=list)
    bound_run2: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.iterations)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "disagreement", "max_alpha",
                             "max_state_kl_sym", "err_run1", "err_run2",
                             "thm2_bound_run1", "thm2_bound_run2"])
            for i in range(len(self.iterations)):
                writer.writerow([
                    self.iterations[i],
                    repr(self.disagreement[i]),
                    repr(float(np.max(self.alpha[i]))),
                    repr(float(np.max(self.kl_sym[i]))),
                    repr(self.err_run1[i]),
                    repr(self.err_run2[i]),
                    repr(self.bound_run1[i]),
                    repr(self.bound_run2[i]),
                ])


def run_coupled(mdp: FiniteMdp, q1_init: QTable, q2_init: QTable,
                kappa: float, alpha_min: float, iters: int) -> IterationTrace:
    """Run the coupled iteration and fill every trace diagnostic.

    The reference Q* is the hard (unregularized) optimum. The trace records
    a row per iteration t = 0..iters, where the alpha/KL diagnostics at row t
    describe the iterates *before* the t-th backup (row `iters` carries the
    final iterates with their own temperature/KL diagnostics).
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    q_star = value_iteration(mdp, "hard").q
    e0_1 = float(np.max(np.abs(q1_init.values - q_star.values)))
    e0_2 = float(np.max(np.abs(q2_init.values - q_star.values)))

    state = CoupledState(q1_init.copy(), q2_init.copy())
    delta0 = state.initial_disagreement
    trace = IterationTrace()

    def record(st: CoupledState, alpha: np.ndarray, sym: np.ndarray,
               kl12: np.ndarray, kl21: np.ndarray):
        t = st.iteration
        trace.iterations.append(t)
        trace.disagreement.append(st.disagreement)
        trace.alpha.append(alpha)
        trace.kl_12.append(kl12)
        trace.kl_21.append(kl21)
        trace.kl_sym.append(sym)
        trace.err_run1.append(float(np.max(np.abs(st.q1.values - q_star.values))))
        trace.err_run2.append(float(np.max(np.abs(st.q2.values - q_star.values))))
        trace.bound_run1.append(thm2_bound(t, e0_1, delta0, mdp.discount,
                                           kappa, alpha_min, mdp.num_actions))
        trace.bound_run2.append(thm2_bound(t, e0_2, delta0, mdp.discount,
                                           kappa, alpha_min, mdp.num_actions))

    def policy_kls(st: CoupledState):
        temps = shared_temperature_field(st.q1, st.q2, kappa, alpha_min)
        kl12 = np.empty(mdp.num_states)
        kl21 = np.empty(mdp.num_states)
        for s in range(mdp.num_states):
            p1 = boltzmann_policy(st.q1.values[s], temps.alpha[s])
            p2 = boltzmann_policy(st.q2.values[s], temps.alpha[s])
            kl12[s] = kl_categorical(p1, p2)
            kl21[s] = kl_categorical(p2, p1)
        return temps.alpha, kl12, kl21

    alpha0, kl12, kl21 = policy_kls(state)
    record(state, alpha0, 0.5 * (kl12 + kl21), kl12, kl21)
    for _ in range(iters):
        state, _, _ = coupled_step(state, mdp, kappa, alpha_min)
        alpha, kl12, kl21 = policy_kls(state)
        record(state, alpha, 0.5 * (kl12 + kl21), kl12, kl21)
    return trace
