import itertools

import numpy as np
import pytest

from maxentlab.mdp import (CategoricalPolicy, FiniteMdp, QTable,
                           TemperatureField, boltzmann_policy, greedy_policy,
                           hard_bellman, policy_return, random_mdp,
                           soft_bellman, value_iteration)


def make_mdp(seed=0, ns=5, na=3, gamma=0.9):
    return random_mdp(ns, na, gamma, np.random.default_rng(seed))


class TestFiniteMdpInvariants:
    def test_rejects_non_stochastic_rows(self):
        P = np.zeros((2, 2, 2))
        P[:, :, 0] = 0.6
        P[:, :, 1] = 0.5
        with pytest.raises(ValueError, match="sum to 1"):
            FiniteMdp(2, 2, P, np.zeros((2, 2)), 0.9)

    def test_rejects_negative_probabilities(self):
        P = np.zeros((1, 1, 2))
        P[0, 0] = [-0.5, 1.5]
        with pytest.raises(ValueError):
            FiniteMdp(1, 1, P.reshape(1, 1, 2), np.zeros((1, 1)), 0.9)

    def test_rejects_bad_discount(self):
        P = np.ones((1, 1, 1))
        for gamma in (0.0, 1.0, 1.2, -0.1):
            with pytest.raises(ValueError, match="discount"):
                FiniteMdp(1, 1, P, np.zeros((1, 1)), gamma)

    def test_rejects_nonfinite_reward(self):
        P = np.ones((1, 1, 1))
        with pytest.raises(ValueError, match="finite"):
            FiniteMdp(1, 1, P, np.array([[np.inf]]), 0.9)

    def test_json_round_trip(self):
        mdp = make_mdp(3)
        clone = FiniteMdp.from_json(mdp.to_json())
        assert clone.num_states == mdp.num_states
        np.testing.assert_allclose(clone.transition, mdp.transition, atol=1e-15)
        np.testing.assert_allclose(clone.reward, mdp.reward)

    def test_json_loader_rejects_invalid(self):
        mdp = make_mdp(3)
        import json
        doc = json.loads(mdp.to_json())
        doc["transition"][0][0][0] += 0.5
        with pytest.raises(ValueError):
            FiniteMdp.from_json(json.dumps(doc))


class TestBoltzmannPolicy:
    def test_constant_row_gives_uniform(self):
        for c in (0.0, -3.5, 100.0):
            p = boltzmann_policy(np.full(3, c), 1.0)
            np.testing.assert_allclose(p, np.full(3, 1 / 3), atol=1e-12)

    def test_two_action_reference_value(self):
        p = boltzmann_policy(np.array([0.0, 1.0]), 1.0)
        # High-precision evaluation of exp/sum: 1/(1+e), e/(1+e).
        np.testing.assert_allclose(p, [0.26894, 0.73106], atol=1e-5)

    def test_large_alpha_approaches_uniform(self):
        p = boltzmann_policy(np.array([0.0, 1.0]), 1000.0)
        np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-3)

    def test_rejects_nonpositive_alpha_and_nonfinite_input(self):
        with pytest.raises(ValueError):
            boltzmann_policy(np.array([0.0, 1.0]), 0.0)
        with pytest.raises(ValueError):
            boltzmann_policy(np.array([0.0, np.nan]), 1.0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            q = rng.normal(size=4)
            c = rng.normal() * 10
            np.testing.assert_allclose(boltzmann_policy(q, 0.7),
                                       boltzmann_policy(q + c, 0.7),
                                       atol=1e-12)

    def test_ordering(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            q = rng.normal(size=5)
            p = boltzmann_policy(q, 0.3)
            order_q = np.argsort(q)
            assert np.all(np.diff(p[order_q]) > 0)

    def test_sums_to_one(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            p = boltzmann_policy(rng.normal(size=6) * 20, 10 ** rng.uniform(-6, 2))
            assert abs(p.sum() - 1.0) < 1e-12

    def test_tiny_alpha_no_overflow(self):
        p = boltzmann_policy(np.array([0.0, 1.0, 2.0]), 1e-12)
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p, [0, 0, 1], atol=1e-12)


class TestHardBellman:
    def test_zero_fixed_point(self):
        mdp = make_mdp(1)
        mdp = FiniteMdp(mdp.num_states, mdp.num_actions, mdp.transition,
                        np.zeros_like(mdp.reward), mdp.discount)
        q = QTable.zeros(mdp)
        np.testing.assert_array_equal(hard_bellman(mdp, q).values, 0.0)

    def test_myopic_case_returns_rewards(self):
        # gamma=0 is outside (0,1); use tiny gamma with zero-value Q instead.
        P = np.ones((1, 2, 1))
        r = np.array([[1.0, 2.0]])
        mdp = FiniteMdp(1, 2, P, r, 1e-12)
        q = QTable(np.array([[5.0, -3.0]]))
        np.testing.assert_allclose(hard_bellman(mdp, q).values, r, atol=1e-10)

    def test_shape_mismatch_rejected(self):
        mdp = make_mdp(1)
        with pytest.raises(ValueError, match="shape"):
            hard_bellman(mdp, QTable(np.zeros((2, 2))))


def enumerate_optimal_q(mdp: FiniteMdp) -> np.ndarray:
    """Brute-force oracle: evaluate every deterministic policy exactly by
    linear solve; the optimum over policies gives V*, then one backup gives Q*."""
    best_v = np.full(mdp.num_states, -np.inf)
    for assignment in itertools.product(range(mdp.num_actions),
                                        repeat=mdp.num_states):
        idx = np.arange(mdp.num_states)
        p_pi = mdp.transition[idx, list(assignment)]
        r_pi = mdp.reward[idx, list(assignment)]
        v = np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * p_pi, r_pi)
        best_v = np.maximum(best_v, v)
    return mdp.reward + mdp.discount * mdp.transition @ best_v


class TestValueIteration:
    def test_zero_reward_immediate_convergence(self):
        mdp = make_mdp(2)
        mdp = FiniteMdp(mdp.num_states, mdp.num_actions, mdp.transition,
                        np.zeros_like(mdp.reward), mdp.discount)
        res = value_iteration(mdp, "hard")
        assert res.converged and res.iterations == 1
        np.testing.assert_array_equal(res.q.values, 0.0)

    def test_single_chain_geometric_series(self):
        mdp = FiniteMdp(1, 1, np.ones((1, 1, 1)), np.ones((1, 1)), 0.9)
        res = value_iteration(mdp, "hard", tol=1e-12)
        assert res.converged
        assert abs(res.q.values[0, 0] - 10.0) < 1e-10

    def test_fixed_point_residual(self):
        mdp = make_mdp(11)
        res = value_iteration(mdp, "hard", tol=1e-10)
        backed = hard_bellman(mdp, res.q)
        assert np.max(np.abs(backed.values - res.q.values)) < 1e-10

    def test_matches_policy_enumeration(self):
        for seed in range(5):
            mdp = make_mdp(seed, ns=5, na=3)
            res = value_iteration(mdp, "hard", tol=1e-12)
            oracle = enumerate_optimal_q(mdp)
            assert np.max(np.abs(res.q.values - oracle)) < 1e-8

    def test_nonconvergence_reported_not_raised(self):
        mdp = make_mdp(4)
        res = value_iteration(mdp, "hard", max_iters=2)
        assert not res.converged and res.iterations == 2

    def test_rejects_nonpositive_tol(self):
        with pytest.raises(ValueError):
            value_iteration(make_mdp(0), "hard", tol=0.0)


class TestSoftBellman:
    def test_single_state_closed_form(self):
        mdp = FiniteMdp(1, 2, np.ones((1, 2, 1)), np.zeros((1, 2)), 0.9)
        temps = TemperatureField.constant(1, 1.0)
        q = soft_bellman(mdp, QTable.zeros(mdp), temps)
        np.testing.assert_allclose(q.values, 0.9 * np.log(2), atol=1e-6)

    def test_small_alpha_recovers_hard_max(self):
        mdp = make_mdp(5)
        q = QTable(np.random.default_rng(5).normal(size=(5, 3)))
        temps = TemperatureField.constant(5, 1e-8)
        soft = soft_bellman(mdp, q, temps)
        hard = hard_bellman(mdp, q)
        assert np.max(np.abs(soft.values - hard.values)) < 1e-6

    def test_soft_hard_sandwich(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            mdp = make_mdp(int(rng.integers(1000)))
            q = QTable(rng.normal(size=(5, 3)))
            alpha = rng.uniform(0.01, 2.0)
            temps = TemperatureField.constant(5, alpha)
            soft = soft_bellman(mdp, q, temps).values
            hard = hard_bellman(mdp, q).values
            gap = soft - hard
            assert np.all(gap >= -1e-12)
            assert np.all(gap <= mdp.discount * np.log(3) * alpha + 1e-12)

    def test_contraction(self):
        rng = np.random.default_rng(12)
        mdp = make_mdp(12)
        temps = TemperatureField(alpha=rng.uniform(0.05, 2.0, 5),
                                 alpha_min=0.05)
        for _ in range(100):
            q1 = QTable(rng.normal(size=(5, 3)) * 10)
            q2 = QTable(rng.normal(size=(5, 3)) * 10)
            d_in = np.max(np.abs(q1.values - q2.values))
            d_out = np.max(np.abs(soft_bellman(mdp, q1, temps).values
                                  - soft_bellman(mdp, q2, temps).values))
            assert d_out <= mdp.discount * d_in + 1e-12

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(ValueError):
            TemperatureField(alpha=np.array([0.0]), alpha_min=0.1)


class TestPolicyReturn:
    def test_zero_reward_zero_return(self):
        mdp = make_mdp(2)
        mdp = FiniteMdp(mdp.num_states, mdp.num_actions, mdp.transition,
                        np.zeros_like(mdp.reward), mdp.discount)
        policy = CategoricalPolicy(np.full((5, 3), 1 / 3))
        assert policy_return(mdp, policy, np.full(5, 0.2)) == 0.0

    def test_geometric_series(self):
        mdp = FiniteMdp(1, 1, np.ones((1, 1, 1)), np.ones((1, 1)), 0.9)
        policy = CategoricalPolicy(np.ones((1, 1)))
        assert abs(policy_return(mdp, policy, np.ones(1)) - 10.0) < 1e-10

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(21)
        mdp = make_mdp(21)
        probs = rng.dirichlet(np.ones(3), size=5)
        policy = CategoricalPolicy(probs / probs.sum(axis=1, keepdims=True))
        init = np.full(5, 0.2)
        exact = policy_return(mdp, policy, init)
        episodes = 100_000
        horizon = int(np.ceil(np.log(1e-4) / np.log(mdp.discount)))
        # Vectorized Monte Carlo rollouts.
        s = rng.choice(5, size=episodes, p=init)
        returns = np.zeros(episodes)
        g = 1.0
        for _ in range(horizon):
            u = rng.random(episodes)
            a = (u[:, None] > np.cumsum(policy.probs[s], axis=1)).sum(axis=1)
            returns += g * mdp.reward[s, a]
            u2 = rng.random(episodes)
            s = (u2[:, None] > np.cumsum(mdp.transition[s, a], axis=1)).sum(axis=1)
            g *= mdp.discount
        se = returns.std(ddof=1) / np.sqrt(episodes)
        assert abs(returns.mean() - exact) < 3 * se + 1e-3

    def test_rejects_bad_initial_dist(self):
        mdp = make_mdp(2)
        policy = CategoricalPolicy(np.full((5, 3), 1 / 3))
        with pytest.raises(ValueError):
            policy_return(mdp, policy, np.full(5, 0.3))


class TestGreedyPolicy:
    def test_argmax_rows(self):
        q = QTable(np.array([[1.0, 2.0], [3.0, 0.0]]))
        p = greedy_policy(q)
        np.testing.assert_array_equal(p.probs, [[0, 1], [1, 0]])
