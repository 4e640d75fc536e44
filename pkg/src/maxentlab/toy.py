"""Single-state continuous-action bandit with a bimodal reward, trained by a
small SAC-style actor-critic on a frozen, partially-covering replay buffer.

The point of the experiment: with limited action coverage, higher entropy
widens the policy's support into regions where the critics extrapolate, and
the actor then chases hallucinated values instead of the true reward modes.

All networks are plain numpy MLPs with hand-written reverse-mode gradients
so that every gradient can be checked against finite differences.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .temperature import (QedConfig, TargetEntropyState, alpha_qed,
                          default_target_entropy_continuous, expectile,
                          update_target_entropy_alpha)

ACTION_LOW = -5.0
ACTION_HIGH = 5.0
MODE_CENTERS = (-2.0, 2.0)
MODE_VARIANCE = 0.5
HORIZON = 2
DISCOUNT = 0.9
GRID_SIZE = 512

LOG_STD_MIN = -20.0
LOG_STD_MAX = 5.0

_SCALE = (ACTION_HIGH - ACTION_LOW) / 2.0
_CENTER = (ACTION_HIGH + ACTION_LOW) / 2.0

# Timestep one-hot features: step 0 bootstraps, step 1 is terminal.
STEP0_FEATURES = np.array([1.0, 0.0])
STEP1_FEATURES = np.array([0.0, 1.0])


def env_reward(a, mode: str = "density"):
    """Bimodal reward over the action interval.

    "density": equal-weight Gaussian mixture density with modes at -2 and 2,
    variance 0.5 each. "bumps": sum of two unit-height Gaussians with the
    same centers and variance (same shape, different scale).
    """
    a = np.asarray(a, dtype=float)
    if np.any(a <= ACTION_LOW) or np.any(a >= ACTION_HIGH):
        raise ValueError("action outside the open interval (-5, 5)")
    bump = sum(np.exp(-(a - c) ** 2 / (2.0 * MODE_VARIANCE)) for c in MODE_CENTERS)
    if mode == "density":
        out = bump / (2.0 * math.sqrt(2.0 * math.pi * MODE_VARIANCE))
    elif mode == "bumps":
        out = bump
    else:
        raise ValueError(f"unknown reward mode {mode!r}")
    return out if out.shape else float(out)


@dataclass
class BimodalBanditEnv:
    """Single physical state, horizon 2, continuous actions in (-5, 5)."""

    reward_mode: str = "density"
    horizon: int = HORIZON
    discount: float = DISCOUNT

    def reward(self, a):
        return env_reward(a, self.reward_mode)


class Mlp:
    """Fully connected net with tanh hidden activations and a linear head.

    forward() caches activations; backward() returns exact parameter
    gradients and the gradient w.r.t. the input.
    """

    def __init__(self, sizes: list[int], rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input dim {x.shape[1]} does not match {self.sizes[0]}")
        hs = [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = np.tanh(z) if i < len(self.weights) - 1 else z
            hs.append(h)
        self._cache = hs
        return h

    def backward(self, dy: np.ndarray):
        """Gradients for the scalar loss whose output-gradient is dy.

        Returns (grads, dx) with grads a list of (dW, db) per layer.
        """
        if self._cache is None:
            raise RuntimeError("backward() requires a preceding forward()")
        hs = self._cache
        dy = np.atleast_2d(np.asarray(dy, dtype=float))
        if dy.shape != hs[-1].shape:
            raise ValueError("output gradient shape mismatch")
        grads = [None] * len(self.weights)
        dh = dy
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                dz = dh * (1.0 - hs[i + 1] ** 2)  # tanh'
            else:
                dz = dh
            grads[i] = (hs[i].T @ dz, dz.sum(axis=0))
            dh = dz @ self.weights[i].T
        return grads, dh

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self._params()])

    def set_flat(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=float)
        offset = 0
        for p in self._params():
            p.flat[:] = vec[offset:offset + p.size]
            offset += p.size
        if offset != vec.size:
            raise ValueError("flat vector length mismatch")

    def _params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    @staticmethod
    def flatten_grads(grads) -> np.ndarray:
        return np.concatenate([g.ravel() for dw_db in grads for g in dw_db])

    def copy(self) -> "Mlp":
        other = Mlp(self.sizes)
        for i in range(len(self.weights)):
            other.weights[i] = self.weights[i].copy()
            other.biases[i] = self.biases[i].copy()
        return other


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def mlp_backward(net: Mlp, dy: np.ndarray):
    return net.backward(dy)


class SquashedGaussianActor:
    """Gaussian head squashed by tanh onto (-5, 5)."""

    def __init__(self, net: Mlp):
        if net.sizes[-1] != 2:
            raise ValueError("actor net must emit (mean, log_std)")
        self.net = net

    def head(self, states: np.ndarray):
        out = self.net.forward(states)
        mu = out[:, 0]
        log_std_raw = out[:, 1]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std, log_std_raw

    def sample(self, states: np.ndarray, rng: np.random.Generator):
        """Reparameterized draw; returns (action, pre_tanh, noise, log_prob)."""
        mu, log_std, _ = self.head(states)
        eps = rng.standard_normal(mu.shape)
        u = mu + np.exp(log_std) * eps
        t = np.tanh(u)
        a = _CENTER + _SCALE * t
        log_prob = (-0.5 * eps ** 2 - 0.5 * math.log(2.0 * math.pi) - log_std
                    - math.log(_SCALE) - np.log1p(-t ** 2))
        return a, u, eps, log_prob

    def mean_action(self, states: np.ndarray) -> np.ndarray:
        """Post-squash deterministic action at the head mean."""
        mu, _, _ = self.head(states)
        return _CENTER + _SCALE * np.tanh(mu)


def squashed_log_prob(actor: SquashedGaussianActor, states: np.ndarray,
                      actions) -> np.ndarray:
    """log pi(a|s) via the tanh change of variables, in action space."""
    actions = np.atleast_1d(np.asarray(actions, dtype=float))
    if np.any(actions <= ACTION_LOW) or np.any(actions >= ACTION_HIGH):
        raise ValueError("log-prob diverges at or beyond the action bounds")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 1 and actions.size > 1:
        states = np.repeat(states, actions.size, axis=0)
    mu, log_std, _ = actor.head(states)
    t = (actions - _CENTER) / _SCALE
    u = np.arctanh(t)
    z = (u - mu) / np.exp(log_std)
    log_gauss = -0.5 * z ** 2 - 0.5 * math.log(2.0 * math.pi) - log_std
    return log_gauss - math.log(_SCALE) - np.log1p(-t ** 2)


class ToyReplayBuffer:
    """Ring of (state features, action, reward, next features, done)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, 2))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, 2))
        self.dones = np.zeros(capacity)
        self.insertions = 0

    def __len__(self) -> int:
        return min(self.insertions, self.capacity)

    def add(self, state, action, reward, next_state, done):
        i = self.insertions % self.capacity
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self.insertions += 1

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, len(self), size=batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.dones[idx])

    def contents_hash(self) -> int:
        data = np.concatenate([self.states[:len(self)].ravel(),
                               self.actions[:len(self)],
                               self.rewards[:len(self)],
                               self.next_states[:len(self)].ravel(),
                               self.dones[:len(self)]])
        return hash(data.tobytes())


def prefill_buffer(buffer: ToyReplayBuffer, n: int, rng: np.random.Generator,
                   env: BimodalBanditEnv | None = None,
                   action_low: float = -3.0, action_high: float = 0.0) -> ToyReplayBuffer:
    """Fill the buffer with uniformly drawn actions from a sub-interval.

    Transitions alternate between the bootstrapped first step and the
    terminal second step of the two-step episodes.
    """
    if n > buffer.capacity:
        raise ValueError("cannot prefill beyond buffer capacity")
    env = env or BimodalBanditEnv()
    for i in range(n):
        a = rng.uniform(action_low, action_high)
        r = env.reward(a)
        if i % 2 == 0:
            buffer.add(STEP0_FEATURES, a, r, STEP1_FEATURES, False)
        else:
            buffer.add(STEP1_FEATURES, a, r, np.zeros(2), True)
    return buffer


class Adam:
    """Per-parameter adaptive step sizes (flat-vector form)."""

    def __init__(self, dim: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Sgd:
    """Fixed-step first-order update."""

    def __init__(self, dim: int, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return params - self.lr * grad


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


@dataclass(frozen=True)
class ToyConfig:
    alpha_mode: str = "fixed"        # fixed | qed
    alpha: float = 0.1
    qed: QedConfig | None = None
    steps: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    snapshot_every: int = 100
    seed: int = 0
    prefill_n: int = 1000
    prefill_low: float = -3.0
    prefill_high: float = 0.0
    buffer_capacity: int = 2000
    target_rate: float = 0.005
    grad_clip: float = 20.0
    optimizer: str = "adam"          # adam | sgd
    reward_mode: str = "density"
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.alpha_mode not in ("fixed", "qed"):
            raise ValueError(f"unknown alpha_mode {self.alpha_mode!r}")
        if self.alpha_mode == "qed" and self.qed is None:
            object.__setattr__(self, "qed", QedConfig())
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.steps < 1 or self.batch_size < 1 or self.snapshot_every < 1:
            raise ValueError("steps, batch_size and snapshot_every must be positive")


@dataclass
class Snapshot:
    step: int
    grid: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    policy_density: np.ndarray
    alpha: float


@dataclass
class ToyRunResult:
    snapshots: list[Snapshot]
    steps: list[int] = field(default_factory=list)
    alphas: list[float] = field(default_factory=list)
    critic_losses: list[float] = field(default_factory=list)
    actor_losses: list[float] = field(default_factory=list)
    final_policy_mean: float = 0.0
    final_policy_std: float = 0.0
    buffer_hash_start: int = 0
    buffer_hash_end: int = 0

    def snapshots_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "grid_point", "q1", "q2", "q_min",
                             "policy_density", "alpha"])
            for snap in self.snapshots:
                for g, q1, q2, dens in zip(snap.grid, snap.q1, snap.q2,
                                           snap.policy_density):
                    writer.writerow([snap.step, repr(float(g)), repr(float(q1)),
                                     repr(float(q2)),
                                     repr(float(min(q1, q2))),
                                     repr(float(dens)), repr(snap.alpha)])


def action_grid(size: int = GRID_SIZE) -> np.ndarray:
    """Cell midpoints over [-5, 5]; avoids the open-interval endpoints."""
    width = (ACTION_HIGH - ACTION_LOW) / size
    return ACTION_LOW + width * (np.arange(size) + 0.5)


class ToyTrainer:
    """SAC-style updates on the frozen prefilled buffer."""

    def __init__(self, config: ToyConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.env = BimodalBanditEnv(config.reward_mode)
        sizes_actor = [2, *config.hidden, 2]
        sizes_critic = [3, *config.hidden, 1]
        self.actor = SquashedGaussianActor(Mlp(sizes_actor, self.rng))
        self.critic1 = Mlp(sizes_critic, self.rng)
        self.critic2 = Mlp(sizes_critic, self.rng)
        self.target1 = self.critic1.copy()
        self.target2 = self.critic2.copy()
        opt_cls = Adam if config.optimizer == "adam" else Sgd
        self.actor_opt = opt_cls(self.actor.net.flat().size, config.lr)
        self.critic1_opt = opt_cls(self.critic1.flat().size, config.lr)
        self.critic2_opt = opt_cls(self.critic2.flat().size, config.lr)
        self.buffer = ToyReplayBuffer(config.buffer_capacity)
        prefill_buffer(self.buffer, config.prefill_n, self.rng, self.env,
                       config.prefill_low, config.prefill_high)
        self.te_state = TargetEntropyState(
            log_alpha=math.log(config.alpha),
            target_entropy=default_target_entropy_continuous(1),
            step_size=config.lr)
        self.grid = action_grid()

    # -- network evaluation helpers --------------------------------------

    @staticmethod
    def _critic_input(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.column_stack([states, actions / ACTION_HIGH])

    def critic_value(self, net: Mlp, states: np.ndarray,
                     actions: np.ndarray) -> np.ndarray:
        return net.forward(self._critic_input(states, actions))[:, 0]

    # -- losses and gradients --------------------------------------------

    def critic_loss_and_grads(self, net: Mlp, states, actions, targets):
        """MSE to the (detached) targets; returns (loss, flat grads)."""
        q = self.critic_value(net, states, actions)
        err = q - targets
        loss = float(np.mean(err ** 2))
        dy = (2.0 * err / err.size)[:, None]
        grads, _ = net.backward(dy)
        return loss, Mlp.flatten_grads(grads)

    def actor_loss_and_grads(self, states: np.ndarray, eps: np.ndarray,
                             alpha: np.ndarray):
        """mean(alpha * log pi(a~) - min_i Q_i(s, a~)) with reparameterized a~.

        eps is the fixed standard-normal noise; alpha is per-sample. Returns
        (loss, flat actor grads).
        """
        out = self.actor.net.forward(states)
        mu = out[:, 0]
        log_std_raw = out[:, 1]
        clip_mask = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        sigma = np.exp(log_std)
        u = mu + sigma * eps
        t = np.tanh(u)
        a = _CENTER + _SCALE * t
        log_prob = (-0.5 * eps ** 2 - 0.5 * math.log(2.0 * math.pi) - log_std
                    - math.log(_SCALE) - np.log1p(-t ** 2))

        q1 = self.critic_value(self.critic1, states, a)
        # Caches in critic1 are needed below, so evaluate critic2 second and
        # re-run whichever net wins the min when computing dQ/da.
        q2 = self.critic_value(self.critic2, states, a)
        use1 = q1 <= q2
        q_min = np.where(use1, q1, q2)
        loss = float(np.mean(alpha * log_prob - q_min))

        n = states.shape[0]
        # dQ_min/da via input gradients of the selected critic.
        dq_da = np.empty(n)
        for net, mask in ((self.critic1, use1), (self.critic2, ~use1)):
            if not np.any(mask):
                continue
            net.forward(self._critic_input(states[mask], a[mask]))
            _, dx = net.backward(np.ones((int(mask.sum()), 1)))
            dq_da[mask] = dx[:, 2] / ACTION_HIGH

        dL_du = (alpha * 2.0 * t - dq_da * _SCALE * (1.0 - t ** 2)) / n
        g_mu = dL_du
        g_log_std = dL_du * sigma * eps + alpha * (-1.0) / n
        g_log_std = np.where(clip_mask, g_log_std, 0.0)
        grads, _ = self.actor.net.backward(np.column_stack([g_mu, g_log_std]))
        return loss, Mlp.flatten_grads(grads)

    # -- temperature ------------------------------------------------------

    def current_alpha(self, states: np.ndarray) -> np.ndarray:
        cfg = self.config
        if cfg.alpha_mode == "fixed":
            return np.full(states.shape[0], cfg.alpha)
        alphas = np.empty(states.shape[0])
        unique, inverse = np.unique(states, axis=0, return_inverse=True)
        for i, s in enumerate(unique):
            delta = self._state_disagreement(s)
            alphas[inverse == i] = alpha_qed(delta, cfg.qed, self.te_state.alpha)
        return alphas

    def _state_disagreement(self, state: np.ndarray) -> float:
        cfg = self.config.qed
        states = np.repeat(state[None, :], cfg.num_action_samples, axis=0)
        a, _, _, _ = self.actor.sample(states, self.rng)
        diffs = np.abs(self.critic_value(self.critic1, states, a)
                       - self.critic_value(self.critic2, states, a))
        return expectile(diffs, cfg.tau)

    # -- training ---------------------------------------------------------

    def _soft_update_targets(self):
        rho = self.config.target_rate
        for online, target in ((self.critic1, self.target1),
                               (self.critic2, self.target2)):
            for i in range(len(online.weights)):
                target.weights[i] += rho * (online.weights[i] - target.weights[i])
                target.biases[i] += rho * (online.biases[i] - target.biases[i])

    def update(self):
        cfg = self.config
        states, actions, rewards, next_states, dones = self.buffer.sample(
            cfg.batch_size, self.rng)
        alpha_next = self.current_alpha(next_states)
        a_next, _, _, logp_next = self.actor.sample(next_states, self.rng)
        t1 = self.critic_value(self.target1, next_states, a_next)
        t2 = self.critic_value(self.target2, next_states, a_next)
        v_next = np.minimum(t1, t2) - alpha_next * logp_next
        targets = rewards + self.env.discount * (1.0 - dones) * v_next

        c_losses = []
        for net, opt in ((self.critic1, self.critic1_opt),
                         (self.critic2, self.critic2_opt)):
            loss, grad = self.critic_loss_and_grads(net, states, actions, targets)
            grad = clip_grad_norm(grad, cfg.grad_clip)
            net.set_flat(opt.step(net.flat(), grad))
            c_losses.append(loss)

        alpha = self.current_alpha(states)
        eps = self.rng.standard_normal(states.shape[0])
        a_loss, a_grad = self.actor_loss_and_grads(states, eps, alpha)
        a_grad = clip_grad_norm(a_grad, cfg.grad_clip)
        self.actor.net.set_flat(self.actor_opt.step(self.actor.net.flat(), a_grad))

        if cfg.alpha_mode == "qed":
            _, _, _, logp = self.actor.sample(states, self.rng)
            self.te_state = update_target_entropy_alpha(self.te_state, logp)

        self._soft_update_targets()
        return float(np.mean(c_losses)), a_loss, float(np.mean(alpha))

    def snapshot(self, step: int) -> Snapshot:
        grid_states = np.repeat(STEP0_FEATURES[None, :], self.grid.size, axis=0)
        q1 = self.critic_value(self.critic1, grid_states, self.grid)
        q2 = self.critic_value(self.critic2, grid_states, self.grid)
        density = np.exp(squashed_log_prob(self.actor, STEP0_FEATURES[None, :],
                                           self.grid))
        alpha = float(self.current_alpha(STEP0_FEATURES[None, :])[0])
        return Snapshot(step=step, grid=self.grid, q1=q1, q2=q2,
                        policy_density=density, alpha=alpha)

    def run(self) -> ToyRunResult:
        cfg = self.config
        result = ToyRunResult(snapshots=[])
        result.buffer_hash_start = self.buffer.contents_hash()
        result.snapshots.append(self.snapshot(0))
        for step in range(1, cfg.steps + 1):
            c_loss, a_loss, alpha = self.update()
            result.steps.append(step)
            result.alphas.append(alpha)
            result.critic_losses.append(c_loss)
            result.actor_losses.append(a_loss)
            if step % cfg.snapshot_every == 0:
                result.snapshots.append(self.snapshot(step))
        result.buffer_hash_end = self.buffer.contents_hash()
        mu, log_std, _ = self.actor.head(STEP0_FEATURES[None, :])
        result.final_policy_mean = float(_CENTER + _SCALE * np.tanh(mu[0]))
        result.final_policy_std = float(np.exp(log_std[0]))
        return result


def train_toy(config: ToyConfig) -> ToyRunResult:
    """Run one seeded toy training and return snapshots plus run logs."""
    return ToyTrainer(config).run()
