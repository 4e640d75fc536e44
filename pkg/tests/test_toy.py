import math

import numpy as np
import pytest
from scipy import integrate

from maxentlab.toy import (ACTION_HIGH, ACTION_LOW, Adam,
                           Mlp, Sgd, SquashedGaussianActor, STEP0_FEATURES,
                           STEP1_FEATURES, ToyConfig, ToyReplayBuffer,
                           ToyTrainer, action_grid, clip_grad_norm,
                           env_reward, prefill_buffer, squashed_log_prob,
                           train_toy)

FD_H = 1e-5
FD_REL_TOL = 1e-4


def fd_check(f, x0, analytic, h=FD_H):
    """Max relative error of analytic grad vs central finite differences."""
    worst = 0.0
    idx = np.linspace(0, x0.size - 1, min(x0.size, 60)).astype(int)
    for i in idx:
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        fd = (f(xp) - f(xm)) / (2 * h)
        denom = max(abs(fd), abs(analytic[i]), 1e-8)
        worst = max(worst, abs(fd - analytic[i]) / denom)
    return worst


class TestEnvReward:
    def test_frozen_mode_value(self):
        # Density of an equal-weight two-Gaussian mixture at a mode center:
        # 0.5/sqrt(2*pi*0.5) + 0.5*exp(-16)/sqrt(2*pi*0.5) ~ 0.2820948.
        want = (0.5 / math.sqrt(2 * math.pi * 0.5)) * (1 + math.exp(-16))
        assert abs(env_reward(2.0) - want) < 1e-12
        assert abs(env_reward(2.0) - 0.2820948) < 1e-6

    def test_symmetry(self):
        for a in (0.5, 1.3, 3.7):
            assert abs(env_reward(a) - env_reward(-a)) < 1e-12

    def test_midpoint_is_local_min(self):
        assert env_reward(0.0) < env_reward(2.0)
        assert env_reward(0.0) < env_reward(-2.0)

    def test_bumps_mode_rescales(self):
        norm = 2.0 * math.sqrt(2 * math.pi * 0.5)
        assert abs(env_reward(1.0, "bumps") - env_reward(1.0) * norm) < 1e-12

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            env_reward(5.0)
        with pytest.raises(ValueError):
            env_reward(-5.0)
        with pytest.raises(ValueError):
            env_reward(6.0)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            env_reward(1.0, "nope")


class TestMlp:
    def test_zero_init_outputs_zero(self):
        net = Mlp([2, 4, 1])
        assert np.all(net.forward(np.ones((3, 2))) == 0.0)

    def test_flat_round_trip(self):
        net = Mlp([2, 5, 1], np.random.default_rng(0))
        vec = net.flat()
        net2 = Mlp([2, 5, 1])
        net2.set_flat(vec)
        np.testing.assert_array_equal(net2.flat(), vec)

    def test_set_flat_length_mismatch(self):
        net = Mlp([2, 3, 1])
        with pytest.raises(ValueError):
            net.set_flat(np.zeros(net.flat().size + 1))

    def test_param_gradients_match_fd(self):
        rng = np.random.default_rng(1)
        net = Mlp([3, 8, 1], rng)
        x = rng.normal(size=(5, 3))

        def loss_at(vec):
            net.set_flat(vec)
            return float(np.sum(net.forward(x) ** 2))

        x0 = net.flat().copy()
        net.set_flat(x0)
        y = net.forward(x)
        grads, _ = net.backward(2.0 * y)
        analytic = Mlp.flatten_grads(grads)
        assert fd_check(loss_at, x0, analytic) < FD_REL_TOL
        net.set_flat(x0)

    def test_input_gradients_match_fd(self):
        rng = np.random.default_rng(2)
        net = Mlp([3, 6, 1], rng)
        x = rng.normal(size=(1, 3))
        y = net.forward(x)
        _, dx = net.backward(np.ones_like(y))
        for i in range(3):
            xp = x.copy()
            xp[0, i] += FD_H
            xm = x.copy()
            xm[0, i] -= FD_H
            fd = (net.forward(xp)[0, 0] - net.forward(xm)[0, 0]) / (2 * FD_H)
            assert abs(fd - dx[0, i]) < 1e-6 * max(1.0, abs(fd))

    def test_backward_without_forward(self):
        net = Mlp([2, 2])
        with pytest.raises(RuntimeError):
            net.backward(np.ones((1, 2)))

    def test_copy_is_independent(self):
        net = Mlp([2, 3, 1], np.random.default_rng(3))
        clone = net.copy()
        clone.weights[0][0, 0] += 1.0
        assert net.weights[0][0, 0] != clone.weights[0][0, 0]


class TestSquashedGaussian:
    def make_actor(self, seed=4):
        return SquashedGaussianActor(Mlp([2, 16, 2], np.random.default_rng(seed)))

    def test_actions_in_bounds(self):
        actor = self.make_actor()
        rng = np.random.default_rng(0)
        states = np.repeat(STEP0_FEATURES[None, :], 1000, axis=0)
        a, _, _, _ = actor.sample(states, rng)
        assert np.all((a > ACTION_LOW) & (a < ACTION_HIGH))

    def test_log_prob_consistency_with_sample(self):
        actor = self.make_actor()
        rng = np.random.default_rng(1)
        states = np.repeat(STEP0_FEATURES[None, :], 50, axis=0)
        a, _, _, logp = actor.sample(states, rng)
        recomputed = squashed_log_prob(actor, states, a)
        np.testing.assert_allclose(recomputed, logp, atol=1e-8)

    def test_density_integrates_to_one(self):
        actor = self.make_actor()

        def dens(a):
            return float(np.exp(squashed_log_prob(
                actor, STEP0_FEATURES[None, :], np.array([a]))[0]))

        total, err = integrate.quad(dens, ACTION_LOW + 1e-9, ACTION_HIGH - 1e-9,
                                    limit=200)
        assert abs(total - 1.0) < 1e-6 + 10 * err

    def test_log_prob_rejects_boundary(self):
        actor = self.make_actor()
        with pytest.raises(ValueError):
            squashed_log_prob(actor, STEP0_FEATURES[None, :], np.array([5.0]))

    def test_mean_action_in_bounds(self):
        actor = self.make_actor()
        m = actor.mean_action(STEP0_FEATURES[None, :])
        assert ACTION_LOW < m[0] < ACTION_HIGH


class TestOptimizers:
    def test_sgd_step(self):
        opt = Sgd(2, 0.1)
        np.testing.assert_allclose(opt.step(np.zeros(2), np.array([1.0, -2.0])),
                                   [-0.1, 0.2])

    def test_adam_first_step_size(self):
        opt = Adam(1, lr=0.01)
        new = opt.step(np.zeros(1), np.array([5.0]))
        # Bias-corrected first step has magnitude ~lr regardless of grad scale.
        assert abs(abs(new[0]) - 0.01) < 1e-6

    def test_adam_minimizes_quadratic(self):
        opt = Adam(1, lr=0.1)
        x = np.array([3.0])
        for _ in range(500):
            x = opt.step(x, 2.0 * x)
        assert abs(x[0]) < 1e-3

    def test_clip_grad_norm(self):
        g = np.array([3.0, 4.0])
        clipped = clip_grad_norm(g, 1.0)
        assert abs(np.linalg.norm(clipped) - 1.0) < 1e-12
        np.testing.assert_array_equal(clip_grad_norm(g, 10.0), g)


class TestBufferAndPrefill:
    def test_prefill_structure(self):
        buf = ToyReplayBuffer(100)
        prefill_buffer(buf, 100, np.random.default_rng(0))
        assert len(buf) == 100
        np.testing.assert_array_equal(buf.states[0], STEP0_FEATURES)
        np.testing.assert_array_equal(buf.states[1], STEP1_FEATURES)
        assert buf.dones[0] == 0.0 and buf.dones[1] == 1.0
        assert np.all((buf.actions[:100] >= -3.0) & (buf.actions[:100] <= 0.0))

    def test_prefill_actions_uniform(self):
        # Chi-square on 10 equal bins over (-3, 0).
        buf = ToyReplayBuffer(2000)
        prefill_buffer(buf, 2000, np.random.default_rng(1))
        counts, _ = np.histogram(buf.actions[:2000], bins=10, range=(-3.0, 0.0))
        expected = 200.0
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        # 9 dof; 99.9th percentile ~ 27.9.
        assert chi2 < 27.9

    def test_prefill_beyond_capacity_rejected(self):
        with pytest.raises(ValueError):
            prefill_buffer(ToyReplayBuffer(10), 11, np.random.default_rng(0))

    def test_contents_hash_changes_with_data(self):
        buf = ToyReplayBuffer(10)
        buf.add(STEP0_FEATURES, -1.0, 0.1, STEP1_FEATURES, False)
        h1 = buf.contents_hash()
        buf.add(STEP1_FEATURES, -2.0, 0.2, np.zeros(2), True)
        assert buf.contents_hash() != h1


class TestTrainerGradients:
    def make_trainer(self, seed=0):
        return ToyTrainer(ToyConfig(steps=1, seed=seed))

    def test_critic_gradients_match_fd(self):
        for seed in range(3):
            tr = self.make_trainer(seed)
            rng = np.random.default_rng(seed + 50)
            states, actions, rewards, next_states, dones = tr.buffer.sample(
                32, rng)
            targets = rng.normal(size=32)

            def loss_at(vec):
                tr.critic1.set_flat(vec)
                q = tr.critic_value(tr.critic1, states, actions)
                return float(np.mean((q - targets) ** 2))

            x0 = tr.critic1.flat().copy()
            _, analytic = tr.critic_loss_and_grads(tr.critic1, states, actions,
                                                   targets)
            assert fd_check(loss_at, x0, analytic) < FD_REL_TOL

    def test_actor_gradients_match_fd(self):
        for seed in range(3):
            tr = self.make_trainer(seed)
            rng = np.random.default_rng(seed + 60)
            states, _, _, _, _ = tr.buffer.sample(16, rng)
            eps = rng.standard_normal(16)
            alpha = np.full(16, 0.1)

            def loss_at(vec):
                tr.actor.net.set_flat(vec)
                loss, _ = tr.actor_loss_and_grads(states, eps, alpha)
                return loss

            x0 = tr.actor.net.flat().copy()
            tr.actor.net.set_flat(x0)
            _, analytic = tr.actor_loss_and_grads(states, eps, alpha)
            assert fd_check(loss_at, x0, analytic) < FD_REL_TOL


class TestTrainerRun:
    def test_buffer_frozen_during_training(self):
        cfg = ToyConfig(steps=20)
        result = train_toy(cfg)
        assert result.buffer_hash_start == result.buffer_hash_end

    def test_deterministic_given_seed(self):
        cfg = ToyConfig(steps=30, seed=3)
        a = train_toy(cfg)
        b = train_toy(cfg)
        assert a.final_policy_mean == b.final_policy_mean
        assert a.critic_losses == b.critic_losses
        np.testing.assert_array_equal(a.snapshots[-1].q1, b.snapshots[-1].q1)

    def test_snapshot_cadence_and_grid(self):
        cfg = ToyConfig(steps=50, snapshot_every=25)
        result = train_toy(cfg)
        assert [s.step for s in result.snapshots] == [0, 25, 50]
        assert result.snapshots[0].grid.size == 512

    def test_target_networks_track_online(self):
        tr = ToyTrainer(ToyConfig(steps=1))
        w0 = tr.target1.weights[0].copy()
        before = float(np.abs(tr.critic1.weights[0] - tr.target1.weights[0]).sum())
        for _ in range(5):
            tr.update()
        after_gap = float(np.abs(tr.critic1.weights[0] - tr.target1.weights[0]).sum())
        moved = float(np.abs(tr.target1.weights[0] - w0).sum())
        assert moved > 0.0          # targets moved
        assert after_gap > 0.0      # but did not jump onto the online net

    def test_snapshot_csv_schema(self, tmp_path):
        result = train_toy(ToyConfig(steps=10, snapshot_every=10))
        path = tmp_path / "snap.csv"
        result.snapshots_to_csv(path)
        import csv
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            assert reader.fieldnames == ["step", "grid_point", "q1", "q2",
                                         "q_min", "policy_density", "alpha"]
            rows = list(reader)
        assert len(rows) == 2 * 512
        assert float(rows[0]["q_min"]) == min(float(rows[0]["q1"]),
                                              float(rows[0]["q2"]))

    def test_qed_mode_runs_with_bounded_alpha(self):
        cfg = ToyConfig(alpha_mode="qed", steps=15)
        result = train_toy(cfg)
        assert all(0.0 < a <= cfg.qed.alpha_max + 1e-12 for a in result.alphas)

    def test_action_grid_midpoints(self):
        g = action_grid(4)
        np.testing.assert_allclose(g, [-3.75, -1.25, 1.25, 3.75])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ToyConfig(alpha_mode="nope")
        with pytest.raises(ValueError):
            ToyConfig(optimizer="nope")
        with pytest.raises(ValueError):
            ToyConfig(steps=0)
