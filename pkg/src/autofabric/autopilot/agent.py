"""Discrete-action deep Q-learning in plain numpy.

One small MLP approximates Q(obs, .), a periodically synced copy provides
bootstrap targets, and a FIFO replay buffer feeds uniform minibatches. The
whole agent is driven by one seeded generator, so a run is reproducible
from its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from ..errors import SchemaMismatch

WEIGHTS_HEADER = "#autofabric-qnet-v1"


@dataclass(frozen=True)
class AgentConfig:
    learning_rate: float = 1e-3
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_mode: str = "linear"  # or "constant" (stays at epsilon_start)
    decay_fraction: float = 0.6
    replay_capacity: int = 10_000
    batch_size: int = 32
    target_sync: int = 50
    hidden: tuple = (64,)
    grad_clip: float = 10.0

    def __post_init__(self):
        if not (0 <= self.epsilon_start <= 1 and 0 <= self.epsilon_end <= 1):
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.epsilon_mode not in ("linear", "constant"):
            raise ValueError(f"unknown epsilon mode {self.epsilon_mode!r}")
        if min(self.replay_capacity, self.batch_size, self.target_sync) <= 0 or not self.hidden:
            raise ValueError("capacities and layer widths must be positive")
        if any(h <= 0 for h in self.hidden) or not self.learning_rate > 0 or not 0 < self.decay_fraction <= 1:
            raise ValueError("invalid agent hyperparameters")


class Transition(NamedTuple):
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray


class MLP:
    """Fully connected net with ReLU hidden layers and a linear head."""

    def __init__(self, sizes: Sequence[int], rng: Optional[np.random.Generator] = None):
        self.sizes = tuple(int(s) for s in sizes)
        self.params: list[np.ndarray] = []
        if rng is None:
            rng = np.random.default_rng(0)
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.params.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray, keep: bool = False):
        acts = [x]
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            x = x @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                x = np.maximum(x, 0.0)
            acts.append(x)
        return (x, acts) if keep else x

    def backward(self, acts: list, grad_out: np.ndarray) -> list[np.ndarray]:
        grads = [None] * len(self.params)
        g = grad_out
        for i in reversed(range(len(self.params) // 2)):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[2 * i].T) * (acts[i] > 0)
        return grads

    def copy(self) -> "MLP":
        twin = MLP.__new__(MLP)
        twin.sizes = self.sizes
        twin.params = [p.copy() for p in self.params]
        return twin

    def load_from(self, other: "MLP") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class ReplayBuffer:
    """Fixed-capacity ring; the oldest transition is evicted first."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def __len__(self) -> int:
        return self.size

    def append(self, t: Transition) -> None:
        i = self._head
        self.obs[i] = t.obs
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_obs[i] = t.next_obs
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest(self) -> Transition:
        i = self._head if self.size == self.capacity else 0
        return Transition(self.obs[i].copy(), int(self.actions[i]), float(self.rewards[i]), self.next_obs[i].copy())

    def sample(self, n: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, n)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx]


class DQNAgent:
    def __init__(self, obs_dim: int, n_actions: int, config: Optional[AgentConfig] = None, *,
                 obs_scale: Optional[Sequence[float]] = None, seed: int = 0, total_steps: Optional[int] = None):
        if obs_dim <= 0 or n_actions <= 0:
            raise ValueError("obs_dim and n_actions must be positive")
        self.config = config or AgentConfig()
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.obs_scale = np.ones(obs_dim) if obs_scale is None else np.asarray(obs_scale, dtype=float)
        if self.obs_scale.shape != (obs_dim,):
            raise ValueError("obs_scale length must equal obs_dim")
        self.total_steps = total_steps
        self.rng = np.random.default_rng(seed)
        self.net = MLP((obs_dim, *self.config.hidden, n_actions), self.rng)
        self.target = self.net.copy()
        self.opt = Adam(self.net.params, self.config.learning_rate)
        self.replay = ReplayBuffer(self.config.replay_capacity, obs_dim)
        self.learn_calls = 0
        self.updates = 0

    def epsilon(self, step: int) -> float:
        c = self.config
        if c.epsilon_mode == "constant" or not self.total_steps:
            return c.epsilon_start
        horizon = max(1.0, c.decay_fraction * self.total_steps)
        frac = min(1.0, step / horizon)
        return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * frac

    def _norm(self, obs) -> np.ndarray:
        return np.asarray(obs, dtype=float) * self.obs_scale

    def q_values(self, obs) -> np.ndarray:
        return self.net.forward(self._norm(obs)[None, :])[0]

    def select_action(self, obs, epsilon: float = 0.0) -> int:
        """Epsilon-greedy; greedy ties go to the lowest index."""
        if self.rng.random() < epsilon:
            return int(self.rng.integers(self.n_actions))
        return greedy(self.q_values(obs))

    def learn(self, transition: Transition) -> Optional[float]:
        """Store ``transition`` and take one minibatch step; returns the loss."""
        if not np.isfinite(transition.reward):
            raise ValueError("reward must be finite")
        obs = self._norm(transition.obs)
        nxt = self._norm(transition.next_obs)
        self.replay.append(Transition(obs, int(transition.action), float(transition.reward), nxt))
        self.learn_calls += 1
        loss = None
        if len(self.replay) >= self.config.batch_size:
            loss = self._update(*self.replay.sample(self.config.batch_size, self.rng))
        if self.learn_calls % self.config.target_sync == 0:
            self.target.load_from(self.net)
        return loss

    def _update(self, obs, actions, rewards, next_obs) -> float:
        n = len(actions)
        target = rewards + self.config.gamma * self.target.forward(next_obs).max(axis=1)
        q, acts = self.net.forward(obs, keep=True)
        err = q[np.arange(n), actions] - target
        grad_out = np.zeros_like(q)
        grad_out[np.arange(n), actions] = 2.0 * err / n
        grads = self.net.backward(acts, grad_out)
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
        if norm > self.config.grad_clip:
            grads = [g * (self.config.grad_clip / norm) for g in grads]
        self.opt.step(self.net.params, grads)
        self.updates += 1
        return float(np.mean(err * err))

    # persistence ---------------------------------------------------------------

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(dump_weights(self.net))

    def load(self, path: Union[str, Path]) -> None:
        net = parse_weights(Path(path).read_text())
        if net.sizes != self.net.sizes:
            raise SchemaMismatch(f"weights shape {net.sizes} != agent shape {self.net.sizes}")
        self.net.load_from(net)
        self.target.load_from(net)


def greedy(q: np.ndarray) -> int:
    return int(np.argmax(q))


def dump_weights(net: MLP) -> str:
    """Text format: header, layer sizes, then each array as a shape line and
    row-major values (one row per line, exact float reprs)."""
    lines = [WEIGHTS_HEADER, "sizes " + " ".join(map(str, net.sizes))]
    for p in net.params:
        mat = p.reshape(1, -1) if p.ndim == 1 else p
        lines.append("array " + " ".join(map(str, p.shape)))
        lines += [" ".join(repr(float(v)) for v in row) for row in mat]
    return "\n".join(lines) + "\n"


def parse_weights(text: str) -> MLP:
    lines = text.splitlines()
    if not lines or lines[0].strip() != WEIGHTS_HEADER:
        raise SchemaMismatch("not an autofabric weights file")
    sizes = tuple(int(s) for s in lines[1].split()[1:])
    net = MLP.__new__(MLP)
    net.sizes = sizes
    net.params = []
    pos = 2
    for _ in range(2 * (len(sizes) - 1)):
        shape = tuple(int(s) for s in lines[pos].split()[1:])
        rows = 1 if len(shape) == 1 else shape[0]
        data = [[float(v) for v in lines[pos + 1 + r].split()] for r in range(rows)]
        net.params.append(np.array(data).reshape(shape))
        pos += 1 + rows
    return net
