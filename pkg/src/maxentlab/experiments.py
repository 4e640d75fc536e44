"""Seeded experiment drivers shared by the CLI and the verification suite.

Each driver is deterministic given its parameters and returns a small result
object plus optional CSV artifacts.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .coupled import run_coupled
from .mdp import (FiniteMdp, QTable, boltzmann_policy, policy_return,
                  random_mdp, value_iteration)
from .metrics import (AggregateSummary, correlation, iqm_with_bootstrap,
                      kl_categorical, symmetric_kl_categorical)
from .tabular import (LearnerConfig, disagreement_correlation_study,
                      run_learner, seed_sweep)
from .temperature import QedConfig
from .toy import ToyConfig, train_toy

KL_SLACK = 1e-9


# ---------------------------------------------------------------------------
# Pairwise-KL bound suite

@dataclass
class KlBoundResult:
    num_tuples: int
    violations: int
    max_ratio: float          # max observed KL / (2 kappa), tightness probe
    rows: list[tuple] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def run_kl_bound_suite(num_tuples: int = 1000, seed: int = 0,
                       num_actions_range: tuple[int, int] = (2, 16),
                       q_range: tuple[float, float] = (-10.0, 10.0),
                       kappa_range: tuple[float, float] = (0.01, 10.0),
                       alpha_min: float = 0.01,
                       keep_rows: bool = False) -> KlBoundResult:
    """Random (Q1, Q2, kappa) tuples: directed and symmetric KLs of the
    Boltzmann policies at the shared disagreement temperature must be
    <= 2 kappa (+ floating slack)."""
    rng = np.random.default_rng(seed)
    violations = 0
    max_ratio = 0.0
    rows = []
    for i in range(num_tuples):
        n = int(rng.integers(num_actions_range[0], num_actions_range[1] + 1))
        q1 = rng.uniform(*q_range, size=n)
        q2 = rng.uniform(*q_range, size=n)
        kappa = float(rng.uniform(*kappa_range))
        alpha = max(alpha_min, float(np.max(np.abs(q1 - q2))) / kappa)
        p1 = boltzmann_policy(q1, alpha)
        p2 = boltzmann_policy(q2, alpha)
        kl12 = kl_categorical(p1, p2)
        kl21 = kl_categorical(p2, p1)
        sym = 0.5 * (kl12 + kl21)
        bound = 2.0 * kappa
        worst = max(kl12, kl21, sym)
        if worst > bound + KL_SLACK:
            violations += 1
        max_ratio = max(max_ratio, worst / bound)
        if keep_rows:
            rows.append((i, n, kappa, kl12, kl21, sym, bound))
    return KlBoundResult(num_tuples, violations, max_ratio, rows)


# ---------------------------------------------------------------------------
# Coupled-iteration convergence suite

@dataclass
class ConvergenceCase:
    mdp_seed: int
    num_states: int
    num_actions: int
    gamma: float
    bound_violations: int
    contraction_violations: int
    kl_violations: int


@dataclass
class ConvergenceResult:
    cases: list[ConvergenceCase]

    @property
    def total_bound_violations(self) -> int:
        return sum(c.bound_violations for c in self.cases)

    @property
    def total_contraction_violations(self) -> int:
        return sum(c.contraction_violations for c in self.cases)

    @property
    def total_kl_violations(self) -> int:
        return sum(c.kl_violations for c in self.cases)

    @property
    def passed(self) -> bool:
        return (self.total_bound_violations == 0
                and self.total_contraction_violations == 0
                and self.total_kl_violations == 0)


def run_convergence_suite(num_mdps: int = 100, seed: int = 0,
                          max_states: int = 20, max_actions: int = 5,
                          gammas: tuple[float, ...] = (0.9, 0.95),
                          iterations: int = 200, kappa: float = 1.0,
                          alpha_min: float = 0.01,
                          q_init_scale: float = 2.0,
                          out_dir: str | None = None) -> ConvergenceResult:
    """Seeded random MDPs: the empirical error of both coupled iterates must
    stay below the three-term bound at every step, the disagreement must
    contract at rate gamma, and the per-state symmetric KL must stay
    below 2 kappa."""
    cases = []
    for i in range(num_mdps):
        rng = np.random.default_rng(seed + i)
        ns = int(rng.integers(2, max_states + 1))
        na = int(rng.integers(2, max_actions + 1))
        gamma = float(gammas[i % len(gammas)])
        mdp = random_mdp(ns, na, gamma, rng)
        q1 = QTable(rng.uniform(-q_init_scale, q_init_scale, (ns, na)))
        q2 = QTable(rng.uniform(-q_init_scale, q_init_scale, (ns, na)))
        trace = run_coupled(mdp, q1, q2, kappa, alpha_min, iterations)
        delta0 = trace.disagreement[0]
        bound_viol = contraction_viol = kl_viol = 0
        for t in range(len(trace)):
            if (trace.err_run1[t] > trace.bound_run1[t] + 1e-9
                    or trace.err_run2[t] > trace.bound_run2[t] + 1e-9):
                bound_viol += 1
            if trace.disagreement[t] > gamma ** t * delta0 + 1e-12:
                contraction_viol += 1
            if float(np.max(trace.kl_sym[t])) > 2.0 * kappa + KL_SLACK:
                kl_viol += 1
        cases.append(ConvergenceCase(seed + i, ns, na, gamma, bound_viol,
                                     contraction_viol, kl_viol))
        if out_dir is not None:
            trace.to_csv(os.path.join(out_dir, f"coupled_trace_{i:03d}.csv"))
    return ConvergenceResult(cases)


@dataclass
class BiasCheckResult:
    errors: list[float]
    bounds: list[float]

    @property
    def passed(self) -> bool:
        return all(e <= b + 1e-8 for e, b in zip(self.errors, self.bounds))


def run_regularization_bias_check(num_mdps: int = 20, seed: int = 100,
                                  max_states: int = 15, max_actions: int = 5,
                                  gamma: float = 0.9, alpha_min: float = 0.05,
                                  kappa: float = 1.0,
                                  iterations: int = 600) -> BiasCheckResult:
    """With identical initial iterates (zero disagreement) the temperature
    stays at the floor, and the converged error to the hard optimum is at
    most gamma * alpha_min * log|A| / (1 - gamma)."""
    errors, bounds = [], []
    for i in range(num_mdps):
        rng = np.random.default_rng(seed + i)
        ns = int(rng.integers(2, max_states + 1))
        na = int(rng.integers(2, max_actions + 1))
        mdp = random_mdp(ns, na, gamma, rng)
        q0 = QTable(rng.uniform(-1.0, 1.0, (ns, na)))
        trace = run_coupled(mdp, q0, q0.copy(), kappa, alpha_min, iterations)
        errors.append(trace.err_run1[-1])
        bounds.append(gamma * alpha_min * math.log(na) / (1.0 - gamma))
    return BiasCheckResult(errors, bounds)


# ---------------------------------------------------------------------------
# Tabular consistency sweep

# Frozen experiment matrix for the consistency-direction study: the MDP seeds
# and k grid used by the CLI defaults and the verification suite.
SWEEP_MDP_SEEDS = (1, 2, 3, 4, 5)
SWEEP_KS = (0.1, 0.2, 0.4, 0.8)


@dataclass
class TabularSweepCell:
    mdp_seed: int
    variant_name: str
    k: float | None
    variability: float
    return_summary: AggregateSummary
    final_returns: list[float]
    steps: list[int] = field(default_factory=list)
    seed_returns: list[list[float]] = field(default_factory=list)


@dataclass
class TabularSweepResult:
    cells: list[TabularSweepCell]
    ks: list[float]

    def variability_by_k(self, mdp_seed: int) -> dict[float, float]:
        return {c.k: c.variability for c in self.cells
                if c.mdp_seed == mdp_seed and c.k is not None}

    def baseline_variability(self, mdp_seed: int) -> float:
        for c in self.cells:
            if c.mdp_seed == mdp_seed and c.k is None:
                return c.variability
        raise KeyError(f"no baseline cell for mdp_seed {mdp_seed}")

    def mdp_seeds(self) -> list[int]:
        seen = []
        for c in self.cells:
            if c.mdp_seed not in seen:
                seen.append(c.mdp_seed)
        return seen

    def spearman_k_vs_variability(self, mdp_seed: int) -> float:
        by_k = self.variability_by_k(mdp_seed)
        ks = sorted(by_k)
        return correlation([float(k) for k in ks], [by_k[k] for k in ks],
                           "spearman")


def run_tabular_sweep(mdp_seeds: list[int], seeds: list[int],
                      ks: list[float], baseline_alpha: float = 0.05,
                      num_states: int = 10, num_actions: int = 4,
                      discount: float = 0.9, steps: int = 800,
                      batch_size: int = 32, learning_rate: float = 0.1,
                      alpha_max: float = 2.0, tau: float = 0.9,
                      num_action_samples: int = 8,
                      out_dir: str | None = None) -> TabularSweepResult:
    """QED-vs-baseline sweep: per (MDP, variant), run the seed matrix and
    measure inter-run variability of the final policies plus the IQM of the
    final greedy returns."""
    cells = []
    for mdp_seed in mdp_seeds:
        mdp = random_mdp(num_states, num_actions, discount,
                         np.random.default_rng(mdp_seed))
        variants: list[tuple[str, float | None, LearnerConfig]] = []
        base_cfg = LearnerConfig(variant="fixed-alpha", alpha=baseline_alpha,
                                 steps=steps, batch_size=batch_size,
                                 learning_rate=learning_rate)
        variants.append(("baseline", None, base_cfg))
        for k in ks:
            qed = QedConfig(k=k, tau=tau, num_action_samples=num_action_samples,
                            alpha_max=alpha_max, action_dim=1)
            cfg = replace(base_cfg, variant="qed", qed=qed, qed_floor="fixed")
            variants.append((f"qed-k{k:g}", k, cfg))
        for name, k, cfg in variants:
            records, v = seed_sweep(mdp, cfg, seeds, eval_seed=mdp_seed + 77_000)
            finals = [rec.return_greedy[-1] for rec in records]
            summary = iqm_with_bootstrap(finals, confidence=0.95,
                                         num_resamples=1000, seed=mdp_seed)
            cells.append(TabularSweepCell(
                mdp_seed, name, k, v, summary, finals,
                steps=list(records[0].steps),
                seed_returns=[list(rec.return_greedy) for rec in records]))
            if out_dir is not None:
                for s, rec in zip(seeds, records):
                    rec.to_csv(os.path.join(
                        out_dir, f"tabular_mdp{mdp_seed}_{name}_seed{s}.csv"))
    return TabularSweepResult(cells, list(ks))


def write_sweep_summary(result: TabularSweepResult, out_dir: str):
    """summary.csv ordered by (mdp_seed, k) with a spearman(k, V) column."""
    rows = []
    for mdp_seed in result.mdp_seeds():
        rho = result.spearman_k_vs_variability(mdp_seed)
        for cell in sorted(
                (c for c in result.cells if c.mdp_seed == mdp_seed),
                key=lambda c: (c.k is not None, c.k if c.k is not None else 0.0)):
            rows.append({
                "mdp_seed": mdp_seed,
                "variant": cell.variant_name,
                "k": "" if cell.k is None else repr(cell.k),
                "variability": repr(cell.variability),
                "return_iqm": repr(cell.return_summary.iqm),
                "return_ci_low": repr(cell.return_summary.ci_low),
                "return_ci_high": repr(cell.return_summary.ci_high),
                "spearman_k_vs_v": repr(rho),
            })
    path = os.path.join(out_dir, "summary.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(rows, fh, indent=2)
    return path


def write_curve_summary(result: TabularSweepResult, out_dir: str):
    """curves.csv: per (mdp_seed, variant, step), the IQM of the greedy
    return across seeds with its bootstrap CI, for band plotting."""
    path = os.path.join(out_dir, "curves.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mdp_seed", "variant", "step", "return_iqm",
                         "return_ci_low", "return_ci_high"])
        for cell in result.cells:
            per_step = np.array(cell.seed_returns)  # (num_seeds, num_steps)
            for j, step in enumerate(cell.steps):
                agg = iqm_with_bootstrap(per_step[:, j], confidence=0.95,
                                         num_resamples=200, seed=cell.mdp_seed)
                writer.writerow([cell.mdp_seed, cell.variant_name, step,
                                 repr(agg.iqm), repr(agg.ci_low),
                                 repr(agg.ci_high)])
    return path


# ---------------------------------------------------------------------------
# Toy collapse experiment

@dataclass
class ToyExperimentResult:
    alpha: float
    seeds: list[int]
    final_means: list[float]
    successes: int              # seeds with final mean within tol of a target

    def success_fraction(self) -> float:
        return self.successes / len(self.seeds)


def run_toy_experiment(alpha: float, seeds: list[int],
                       target_mode: float = -2.0, tol: float = 0.5,
                       config: ToyConfig | None = None,
                       out_dir: str | None = None) -> ToyExperimentResult:
    """Train the toy agent for each seed and count how many land on the
    in-support reward mode."""
    base = config or ToyConfig()
    means = []
    successes = 0
    for s in seeds:
        cfg = replace(base, alpha=alpha, seed=s)
        result = train_toy(cfg)
        means.append(result.final_policy_mean)
        if abs(result.final_policy_mean - target_mode) <= tol:
            successes += 1
        if out_dir is not None:
            result.snapshots_to_csv(
                os.path.join(out_dir, f"toy_alpha{alpha:g}_seed{s}.csv"))
    return ToyExperimentResult(alpha, list(seeds), means, successes)


# ---------------------------------------------------------------------------
# Correlation diagnostic

def run_correlation_diagnostic(num_mdps: int = 12, seed: int = 500,
                               seeds_per_mdp: int = 5,
                               num_states_range: tuple[int, int] = (5, 12),
                               num_actions_range: tuple[int, int] = (2, 5),
                               reward_scale_range: tuple[float, float] = (0.5, 4.0),
                               discount: float = 0.9,
                               config: LearnerConfig | None = None,
                               out_dir: str | None = None):
    """Early double-critic disagreement vs cross-seed value dispersion,
    one point per seeded MDP.

    The MDP family is heterogeneous in size and reward scale so both series
    vary with problem difficulty rather than only with sampling noise.
    """
    rng = np.random.default_rng(seed)
    mdps = []
    for _ in range(num_mdps):
        ns = int(rng.integers(num_states_range[0], num_states_range[1] + 1))
        na = int(rng.integers(num_actions_range[0], num_actions_range[1] + 1))
        base = random_mdp(ns, na, discount, rng)
        scale = float(rng.uniform(*reward_scale_range))
        mdps.append(FiniteMdp(ns, na, base.transition, base.reward * scale,
                              discount))
    cfg = config or LearnerConfig(variant="fixed-alpha", alpha=0.05, steps=1000)
    study = disagreement_correlation_study(mdps, cfg,
                                           seeds=list(range(seeds_per_mdp)))
    if out_dir is not None:
        with open(os.path.join(out_dir, "correlation_scatter.csv"), "w",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mdp_index", "early_disagreement",
                             "cross_seed_dispersion"])
            for row in study.scatter_rows():
                writer.writerow([row[0], repr(row[1]), repr(row[2])])
    return study
