"""Training and baseline loops producing per-step run traces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..telemetry import StepMetrics
from .agent import DQNAgent, Transition, greedy
from .envs import ChainEnv


@dataclass
class StepRecord:
    step: int
    phase: str
    action: Optional[int]
    reward: float
    epsilon: float
    metrics: StepMetrics


def train(env: ChainEnv, agent: DQNAgent, steps: int) -> list[StepRecord]:
    """select_action -> env.step -> learn, ``steps`` times, after a warm-up round."""
    if steps <= 0:
        raise ValueError("steps must be positive")
    if agent.total_steps is None:
        agent.total_steps = steps
    obs = env.reset()
    trace = []
    for k in range(steps):
        eps = agent.epsilon(k)
        action = agent.select_action(obs, eps)
        res = env.step(action)
        agent.learn(Transition(obs, action, res.reward, res.obs))
        trace.append(StepRecord(k, env.phase_label(k), action, res.reward, eps, res.metrics))
        obs = res.obs
    return trace


def run_baseline(env: ChainEnv, steps: int, action: Optional[int] = None) -> list[StepRecord]:
    """Hold one setting for the whole run; ``None`` keeps the environment defaults."""
    if steps <= 0:
        raise ValueError("steps must be positive")
    env.reset()
    trace = []
    for k in range(steps):
        res = env.step(action if k == 0 else None)
        trace.append(StepRecord(k, env.phase_label(k), action, res.reward, 0.0, res.metrics))
    return trace


class BanditEnv:
    """Stationary Bernoulli bandit with a constant observation."""

    name = "bandit"

    def __init__(self, means=(0.2, 0.8), seed: int = 0):
        self.means = tuple(means)
        self.n_actions = len(self.means)
        self.obs_scale = np.ones(1)
        self.rng = np.random.default_rng(seed)
        self.obs = np.ones(1)

    def reset(self) -> np.ndarray:
        return self.obs

    def step(self, action: int) -> tuple[np.ndarray, float]:
        return self.obs, float(self.rng.random() < self.means[action])


def train_bandit(env: BanditEnv, agent: DQNAgent, steps: int) -> tuple[list[int], list[int]]:
    """Returns (actions taken, greedy action after each step)."""
    if agent.total_steps is None:
        agent.total_steps = steps
    obs = env.reset()
    actions, greedy_picks = [], []
    for k in range(steps):
        a = agent.select_action(obs, agent.epsilon(k))
        nxt, r = env.step(a)
        agent.learn(Transition(obs, a, r, nxt))
        actions.append(a)
        greedy_picks.append(greedy(agent.q_values(nxt)))
        obs = nxt
    return actions, greedy_picks
