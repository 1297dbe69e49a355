"""Environment adapters between the Q-learning agent and the simulated network.

Every learning step is one measurement round: the chosen action is applied
(configuration transaction or client configuration file), clients send for
``step_duration`` seconds, then the monitor waits for the round's
transactions to settle before reporting metrics. Throughputs are measured
over the whole round, so tail latency (e.g. the last partial block waiting
for its batch timeout) shows up as lost throughput.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..chainsim import CostModel, OrdererConfig, Simulator
from ..contracts import Variant, generator_genesis, music_genesis
from ..telemetry import StepMetrics, collect
from ..workload import (ADMISSION_LEVELS, ORGS, ClientConfig, ClientSpec, MusicOscillating, RateSchedule,
                        SkewedUpdate, Update, WorkloadKind, default_clients, fairness_scenario, generate_step)

MAX_MESSAGE_COUNTS = (300, 500, 1000)
PREFERRED_MAX_BYTES = (2.0, 4.0, 16.0)
BATCH_TIMEOUTS = (0.5, 1.0, 2.0)
SNAPSHOT_INTERVALS = (16.0, 32.0, 64.0)

PARAM_ACTIONS = tuple(itertools.product(MAX_MESSAGE_COUNTS, PREFERRED_MAX_BYTES, BATCH_TIMEOUTS, SNAPSHOT_INTERVALS))
ADMISSION_ACTIONS = tuple(itertools.product(ADMISSION_LEVELS, ADMISSION_LEVELS))
CONTRACT_ACTIONS = (Variant.VANILLA, Variant.DELTA)


def decode_param(index: int) -> tuple:
    """Row-major decode, max message count outermost: 0 -> (300, 2, 0.5, 16)."""
    return PARAM_ACTIONS[index]


def encode_param(action: Sequence) -> int:
    return PARAM_ACTIONS.index(tuple(action))


def decode_admission(index: int) -> tuple:
    """Index -> (Org1 multiplier, Org2 multiplier); 0 leaves both unchanged."""
    return ADMISSION_ACTIONS[index]


def encode_admission(action: Sequence) -> int:
    return ADMISSION_ACTIONS.index(tuple(action))


DEFAULT_PARAM_ACTION = encode_param((500, 2.0, 2.0, 16.0))


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    metrics: StepMetrics
    action: Optional[int]


class ChainEnv:
    """Shared round mechanics; subclasses define actions, observation, reward."""

    n_actions: int = 0
    obs_scale: np.ndarray = np.ones(0)
    name = "base"

    def __init__(self, *, kind: WorkloadKind, clients: list[ClientSpec], schedule: Optional[RateSchedule],
                 seed: int = 0, step_duration: float = 30.0, cost: Optional[CostModel] = None,
                 orderer: Optional[OrdererConfig] = None, genesis: Optional[dict] = None,
                 client_config_path: Optional[Path] = None, settle_limit: Optional[float] = None,
                 sim_kwargs: Optional[dict] = None, trace=None):
        self.kind = kind
        self.clients = clients
        self.schedule = schedule
        self.seed = seed
        self.step_duration = step_duration
        self.settle_limit = settle_limit if settle_limit is not None else max(60.0, 10 * step_duration)
        self.sim = Simulator(orderer, cost, genesis=genesis, trace=trace, **(sim_kwargs or {}))
        self.client_config_path = Path(client_config_path) if client_config_path else None
        self._client_config = ClientConfig()
        self._write_client_config()
        self.step_index = 0
        self._jain = 0.5
        self.last_metrics: Optional[StepMetrics] = None

    # client configuration channel ------------------------------------------

    def _write_client_config(self) -> None:
        if self.client_config_path is not None:
            self._client_config.save(self.client_config_path)

    def _read_client_config(self) -> ClientConfig:
        if self.client_config_path is not None:
            return ClientConfig.load(self.client_config_path)
        return self._client_config

    # rounds ------------------------------------------------------------------

    def _rng(self, step: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, step])

    def _round(self, step: int, rng: np.random.Generator) -> StepMetrics:
        sim = self.sim
        t0 = sim.clock
        cfg = self._read_client_config()
        proposals = generate_step(self.kind, step, self.clients, self.schedule, cfg.policy, self.step_duration,
                                  rng, start=t0, variant=cfg.variant)
        offered = {c.client_id: 0 for c in self.clients}
        for p in proposals:
            offered[p.client.client_id] += 1
            sim.submit(p.call, p.submit_time, p.client.client_id, p.client.org_id)
        outcomes = sim.advance(t0 + self.step_duration)
        outcomes += sim.settle(t0 + self.step_duration + self.settle_limit)
        elapsed = max(sim.clock - t0, self.step_duration)
        metrics = collect(outcomes, offered, self.step_duration, elapsed=elapsed, previous_jain=self._jain)
        self._jain = metrics.jain
        self.last_metrics = metrics
        return metrics

    def reset(self) -> np.ndarray:
        """Observe one warm-up round under the initial settings."""
        metrics = self._round(0, np.random.default_rng([self.seed, 2**32 - 1]))
        return self.observe(metrics)

    def step(self, action: Optional[int]) -> StepResult:
        """Apply ``action`` (``None`` keeps the current settings) and run one round."""
        if action is not None:
            if not 0 <= action < self.n_actions:
                raise ValueError(f"action {action} out of range")
            self.apply(action)
        metrics = self._round(self.step_index, self._rng(self.step_index))
        self.step_index += 1
        return StepResult(self.observe(metrics), self.reward(metrics), metrics, action)

    def phase_label(self, step: int) -> str:
        if self.schedule is None:
            return "-"
        return f"{self.schedule.rate_at(step):g}"

    def apply(self, action: int) -> None:
        raise NotImplementedError

    def observe(self, m: StepMetrics) -> np.ndarray:
        raise NotImplementedError

    def reward(self, m: StepMetrics) -> float:
        raise NotImplementedError


class ParamTuningEnv(ChainEnv):
    """Actions: the 81 orderer knob tuples; state [T, SR]; reward T / SR."""

    n_actions = len(PARAM_ACTIONS)
    obs_scale = np.array([1e-3, 1e-3])
    name = "param-tuning"

    def __init__(self, *, skewed: bool = False, seed: int = 0, step_duration: float = 30.0,
                 schedule: Optional[RateSchedule] = None, clients: Optional[list] = None,
                 hot_keys: int = 50, hot_prob: float = 0.5, **kw):
        kind = SkewedUpdate(hot_keys=hot_keys, hot_prob=hot_prob) if skewed else Update()
        super().__init__(kind=kind, clients=clients or default_clients(), schedule=schedule or RateSchedule(),
                         seed=seed, step_duration=step_duration, genesis=generator_genesis(), **kw)

    def apply(self, action: int) -> None:
        self.sim.propose_config(OrdererConfig(*decode_param(action)), at=self.sim.clock)

    def observe(self, m):
        return np.array([m.overall_tps, m.send_rate])

    def reward(self, m):
        return m.overall_tps / m.send_rate if m.send_rate else 0.0


class ContractEnv(ChainEnv):
    """Actions: 0 = vanilla, 1 = delta; state [S_UT, SR]; reward S_UT / SR."""

    n_actions = 2
    obs_scale = np.array([1e-3, 1e-3])
    name = "contract-adapt"

    def __init__(self, *, seed: int = 0, step_duration: float = 30.0, rate: float = 100.0,
                 phase_length: int = 100, popular: int = 16, n_songs: int = 10_000, **kw):
        kind = MusicOscillating(phase_length, phase_length, popular)
        super().__init__(kind=kind, clients=default_clients(rate), schedule=None, seed=seed,
                         step_duration=step_duration, genesis=music_genesis(n_songs), **kw)

    def set_variant(self, variant: Variant) -> None:
        self._client_config.variant = Variant(variant)
        self._write_client_config()

    def apply(self, action: int) -> None:
        self.set_variant(CONTRACT_ACTIONS[action])

    def phase_label(self, step: int) -> str:
        return self.kind.mode(step)

    def observe(self, m):
        return np.array([m.success_tps, m.send_rate])

    def reward(self, m):
        return m.success_tps / m.send_rate if m.send_rate else 0.0


class AdmissionEnv(ChainEnv):
    """Actions: per-org multipliers from {1, 0.6, 0.4}^2; state [S_UT, SR, J]; reward J."""

    n_actions = len(ADMISSION_ACTIONS)
    obs_scale = np.array([1e-3, 1e-3, 1.0])
    name = "admission-fairness"

    def __init__(self, *, seed: int = 0, step_duration: float = 30.0, hot_keys: int = 50,
                 hot_prob: float = 0.5, **kw):
        clients, kind = fairness_scenario(hot_keys, hot_prob)
        super().__init__(kind=kind, clients=clients, schedule=None, seed=seed, step_duration=step_duration,
                         genesis=generator_genesis(), **kw)

    def set_multipliers(self, org1: float, org2: float) -> None:
        self._client_config.admission = {ORGS[0]: org1, ORGS[1]: org2}
        self._write_client_config()

    def apply(self, action: int) -> None:
        self.set_multipliers(*decode_admission(action))

    def observe(self, m):
        return np.array([m.success_tps, m.send_rate, m.jain])

    def reward(self, m):
        return m.jain
