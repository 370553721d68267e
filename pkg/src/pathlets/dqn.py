"""Deep Q-learning on numpy: MLP with dropout, Adam, Huber loss, replay.

The network maps an environment observation to one Q-value per action
(KEEP plus one merge slot per eligible neighbour). Everything that draws
random numbers takes an explicit ``numpy.random.Generator`` so that runs are
bit-reproducible from a single seed.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .env import KEEP, MergeEnv, PathletDictionary
from .rewards import Scalarizer, ScalarizerConfig

log = logging.getLogger(__name__)


# --------------------------------------------------------------------- network

class QNetwork:
    """Fully connected ReLU network with an identity output layer."""

    def __init__(self, layer_sizes, dropout_rate: float = 0.2, rng=None, zero_init: bool = False):
        self.layer_sizes = [int(n) for n in layer_sizes]
        self.dropout_rate = float(dropout_rate)
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            if zero_init:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_actions(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def _forward(self, x, training: bool, rng):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"state has dimension {x.shape[-1]}, network expects {self.input_dim}")
        h = x
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i == last:
                cache.append((h, None, None))
                return z, cache
            a = np.maximum(z, 0.0)
            mask = None
            if training and self.dropout_rate > 0.0:
                keep = 1.0 - self.dropout_rate
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            cache.append((h, z, mask))
            h = a
        raise AssertionError("network has no layers")

    def forward(self, x, training: bool = False, rng=None) -> np.ndarray:
        if training and self.dropout_rate > 0.0 and rng is None:
            raise ValueError("training-mode forward needs an rng for dropout masks")
        return self._forward(x, training, rng)[0]

    def backward(self, cache, grad_out) -> list:
        """Gradients of a scalar loss w.r.t. ``params()`` given dL/dQ."""
        grads = [None] * (2 * len(self.weights))
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            h_in, _, _ = cache[i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i == 0:
                break
            g = g @ self.weights[i].T
            _, z_prev, mask_prev = cache[i - 1]
            if mask_prev is not None:
                g = g * mask_prev
            g = g * (z_prev > 0.0)
        return grads

    def copy(self) -> "QNetwork":
        new = QNetwork.__new__(QNetwork)
        new.layer_sizes = list(self.layer_sizes)
        new.dropout_rate = self.dropout_rate
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def load_from(self, other: "QNetwork") -> None:
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        i = 0
        for p in self.params():
            p[...] = vec[i:i + p.size].reshape(p.shape)
            i += p.size


def forward(net: QNetwork, state, training: bool = False, rng=None) -> np.ndarray:
    return net.forward(state, training=training, rng=rng)


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def huber(delta_values, delta: float = 1.0):
    """Elementwise Huber loss and its derivative."""
    absd = np.abs(delta_values)
    quad = absd <= delta
    loss = np.where(quad, 0.5 * delta_values ** 2, delta * (absd - 0.5 * delta))
    grad = np.where(quad, delta_values, delta * np.sign(delta_values))
    return loss, grad


def q_loss_and_grads(net: QNetwork, states, actions, targets, delta: float = 1.0,
                     training: bool = False, rng=None):
    """Mean Huber loss between Q(s, a) and the targets, with parameter gradients."""
    q, cache = net._forward(states, training, rng)
    idx = np.arange(len(actions))
    diff = q[idx, actions] - targets
    loss, dloss = huber(diff, delta)
    grad_q = np.zeros_like(q)
    grad_q[idx, actions] = dloss / len(actions)
    return float(loss.mean()), net.backward(cache, grad_q)


# ---------------------------------------------------------------------- replay

class ReplayBuffer:
    """Fixed-capacity ring of (s, a, r, s', done, valid-mask-of-s')."""

    def __init__(self, capacity: int, obs_dim: int, n_actions: int):
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros((self.capacity, obs_dim))
        self.dones = np.zeros(self.capacity, dtype=bool)
        self.next_masks = np.ones((self.capacity, n_actions), dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, done, next_mask=None) -> None:
        i = self.cursor
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s2
        self.dones[i] = done
        self.next_masks[i] = True if next_mask is None else next_mask
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng) -> dict:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return {"states": self.states[idx], "actions": self.actions[idx],
                "rewards": self.rewards[idx], "next_states": self.next_states[idx],
                "dones": self.dones[idx], "next_masks": self.next_masks[idx]}


# ---------------------------------------------------------------- core updates

def select_action(net: QNetwork, state, epsilon: float, valid_mask, rng) -> int:
    """Epsilon-greedy over valid actions; greedy ties go to the lowest index."""
    valid_mask = np.asarray(valid_mask, dtype=bool)
    valid = np.flatnonzero(valid_mask)
    if len(valid) == 0:
        raise ValueError("no valid action")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(valid[rng.integers(len(valid))])
    q = net.forward(state)
    q = np.where(valid_mask, q, -np.inf)
    return int(np.argmax(q))


def td_targets(batch: dict, online_net: QNetwork | None, target_net: QNetwork, gamma: float) -> np.ndarray:
    """r for terminal transitions, else r + gamma * max over valid a' of Q_target(s', a')."""
    q_next = target_net.forward(batch["next_states"])
    masks = batch.get("next_masks")
    if masks is not None:
        q_next = np.where(masks, q_next, -np.inf)
    best = q_next.max(axis=1)
    best = np.where(batch["dones"], 0.0, best)
    return batch["rewards"] + gamma * best


@dataclass
class TrainConfig:
    iterations: int = 100
    episodes_per_iteration: int = 5
    batch_size: int = 64
    gamma: float = 0.99
    learning_rate: float = 0.001
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    target_sync_interval: int = 500
    buffer_capacity: int = 100_000
    hidden_layers: tuple = (128, 64, 32)
    dropout_rate: float = 0.2
    huber_delta: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        for name in ("epsilon_start", "epsilon_end", "epsilon_decay_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.iterations < 0 or self.episodes_per_iteration < 1 or self.batch_size < 1:
            raise ValueError("iterations >= 0, episodes_per_iteration >= 1 and batch_size >= 1 required")
        self.hidden_layers = tuple(int(h) for h in self.hidden_layers)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        return d


class DQNAgent:
    """Online/target network pair with optimizer, replay buffer and counters."""

    def __init__(self, obs_dim: int, n_actions: int, config: TrainConfig):
        self.config = config
        seeds = np.random.SeedSequence(config.rng_seed).spawn(3)
        self.init_rng, self.act_rng, self.train_rng = (np.random.default_rng(s) for s in seeds)
        sizes = [obs_dim, *config.hidden_layers, n_actions]
        self.online = QNetwork(sizes, config.dropout_rate, self.init_rng)
        self.target = self.online.copy()
        self.optimizer = Adam(self.online.params(), lr=config.learning_rate)
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_dim, n_actions)
        self.env_steps = 0

    def act(self, state, epsilon: float, valid_mask) -> int:
        return select_action(self.online, state, epsilon, valid_mask, self.act_rng)

    @property
    def gradient_steps(self) -> int:
        return self.optimizer.t

    def train_step(self) -> float | None:
        return train_step(self.online, self.target, self.buffer, self.config,
                          self.optimizer, self.train_rng)


def train_step(online_net: QNetwork, target_net: QNetwork, buffer: ReplayBuffer,
               config: TrainConfig, optimizer: Adam, rng) -> float | None:
    """One Adam update on a replay minibatch; ``None`` while the buffer is warming up.

    The target network is hard-synced every ``target_sync_interval`` updates.
    """
    if len(buffer) < config.batch_size:
        return None
    batch = buffer.sample(config.batch_size, rng)
    y = td_targets(batch, online_net, target_net, config.gamma)
    loss, grads = q_loss_and_grads(online_net, batch["states"], batch["actions"], y,
                                   config.huber_delta, training=True, rng=rng)
    optimizer.step(online_net.params(), grads)
    if optimizer.t % config.target_sync_interval == 0:
        target_net.load_from(online_net)
    return loss


# -------------------------------------------------------------------- training

@dataclass
class TrainingResult:
    agent: DQNAgent | None
    returns: list  # per iteration: (mean, min, max)
    dictionary: PathletDictionary
    final_return: float | None = None
    episode_returns: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # final episode, when the env records one

    @property
    def mean_returns(self) -> list:
        return [r[0] for r in self.returns]


def epsilon_at(config: TrainConfig, episode: int, total_episodes: int) -> float:
    horizon = config.epsilon_decay_fraction * total_episodes
    if horizon <= 0:
        return config.epsilon_end
    frac = min(1.0, episode / horizon)
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


def run_episode(env: MergeEnv, agent: DQNAgent | None, epsilon: float, seed: int,
                learn: bool, rng=None) -> float:
    """Play one episode; with ``agent=None`` actions are uniform over valid ones."""
    env.reset(seed=seed)
    state = env.observation_vector()
    mask = env.valid_action_mask()
    total = 0.0
    while not env.done:
        if agent is None:
            valid = np.flatnonzero(mask)
            action = int(valid[rng.integers(len(valid))])
        else:
            action = agent.act(state, epsilon, mask)
        res = env.step(action)
        next_state = env.observation_vector(res.observation)
        next_mask = env.valid_action_mask()
        total += res.reward
        if learn:
            agent.buffer.add(state, action, res.reward, next_state, res.done, next_mask)
            agent.env_steps += 1
            agent.train_step()
        state, mask = next_state, next_mask
    return total


def random_policy_episode(env: MergeEnv, rng=None, seed: int | None = None) -> float:
    rng = np.random.default_rng(0) if rng is None else rng
    if seed is None:
        seed = int(rng.integers(2**31))
    return run_episode(env, None, 1.0, seed, learn=False, rng=rng)


def run_training(make_env: Callable[[], MergeEnv], config: TrainConfig,
                 scalarizer_config: ScalarizerConfig | None = None,
                 policy: str = "dqn") -> TrainingResult:
    """Train over ``iterations x episodes_per_iteration`` episodes, then emit a dictionary.

    ``policy="random"`` plays uniformly random valid actions and never learns;
    its final dictionary comes from one more random episode.
    """
    env = make_env()
    if scalarizer_config is not None:
        env.scalarizer = Scalarizer(scalarizer_config)
    ep_rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed).spawn(5)[4])
    agent = DQNAgent(env.obs_dim, env.n_actions, config) if policy == "dqn" else None
    if policy not in ("dqn", "random"):
        raise ValueError(f"unknown policy {policy!r}")
    rand_rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed + 1))
    total_eps = config.iterations * config.episodes_per_iteration
    returns = []
    episode_returns = []
    episode = 0
    for it in range(config.iterations):
        rets = []
        for _ in range(config.episodes_per_iteration):
            seed = int(ep_rng.integers(2**31))
            if agent is None:
                r = run_episode(env, None, 1.0, seed, learn=False, rng=rand_rng)
            else:
                eps = epsilon_at(config, episode, total_eps)
                r = run_episode(env, agent, eps, seed, learn=True)
            rets.append(r)
            episode += 1
        episode_returns.extend(rets)
        returns.append((float(np.mean(rets)), float(np.min(rets)), float(np.max(rets))))
        log.debug("iteration %d mean return %.5f", it, returns[-1][0])
    if config.iterations == 0:
        env.reset(seed=config.rng_seed)
        return TrainingResult(agent, [], env.dictionary(), None, [])
    seed = int(ep_rng.integers(2**31))
    if agent is None:
        final = run_episode(env, None, 1.0, seed, learn=False, rng=rand_rng)
    else:
        final = run_episode(env, agent, 0.0, seed, learn=False)
    return TrainingResult(agent, returns, env.dictionary(), final, episode_returns, list(env.trace))


# ------------------------------------------------------------------ checkpoint

def save_checkpoint(agent: DQNAgent, path) -> None:
    opt = agent.optimizer
    payload = {
        "layer_sizes": agent.online.layer_sizes,
        "dropout_rate": agent.online.dropout_rate,
        "online": agent.online.flat().tolist(),
        "target": agent.target.flat().tolist(),
        "adam": {"t": opt.t, "lr": opt.lr,
                 "m": np.concatenate([m.ravel() for m in opt.m]).tolist(),
                 "v": np.concatenate([v.ravel() for v in opt.v]).tolist()},
        "env_steps": agent.env_steps,
        "train_config": agent.config.to_dict(),
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> DQNAgent:
    d = json.loads(Path(path).read_text())
    cfg = TrainConfig(**d["train_config"])
    sizes = d["layer_sizes"]
    agent = DQNAgent(sizes[0], sizes[-1], cfg)
    agent.online.set_flat(d["online"])
    agent.target.set_flat(d["target"])
    opt = agent.optimizer
    opt.t = d["adam"]["t"]
    for store, key in ((opt.m, "m"), (opt.v, "v")):
        flat = np.asarray(d["adam"][key])
        i = 0
        for arr in store:
            arr[...] = flat[i:i + arr.size].reshape(arr.shape)
            i += arr.size
    agent.env_steps = d["env_steps"]
    return agent
