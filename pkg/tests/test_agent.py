import numpy as np
import pytest
from hypothesis import given, strategies as st

from autofabric.autopilot.agent import AgentConfig, DQNAgent, MLP, ReplayBuffer, Transition, greedy, parse_weights
from autofabric.autopilot.envs import (ADMISSION_ACTIONS, CONTRACT_ACTIONS, DEFAULT_PARAM_ACTION, PARAM_ACTIONS,
                                       AdmissionEnv, ContractEnv, ParamTuningEnv, decode_admission, decode_param,
                                       encode_admission, encode_param)
from autofabric.autopilot.train import BanditEnv, run_baseline, train, train_bandit
from autofabric.contracts import Variant
from autofabric.errors import SchemaMismatch
from autofabric.workload import ClientConfig, RateSchedule


CHI2_CRIT_DF8_P001 = 26.124


def chi2_uniform(counts):
    expected = counts.sum() / len(counts)
    return float(((counts - expected) ** 2 / expected).sum())


def test_epsilon_one_is_uniform():
    agent = DQNAgent(2, 9, seed=3)
    picks = [agent.select_action([0.1, 0.2], epsilon=1.0) for _ in range(10_000)]
    counts = np.bincount(picks, minlength=9)
    assert chi2_uniform(counts) < CHI2_CRIT_DF8_P001


def test_argmax_and_ties():
    assert greedy(np.array([0.1, 0.9])) == 1
    assert greedy(np.array([0.5, 0.5, 0.5])) == 0
    agent = DQNAgent(1, 3, seed=0)
    for p in agent.net.params:
        p[...] = 0.0
    assert agent.select_action([1.0], epsilon=0.0) == 0


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=81), st.floats(1e-3, 1e3))
def test_argmax_scale_invariant(q, k):
    q = np.array(q)
    assert greedy(q) == greedy(k * q)


def test_gamma_zero_contracts_to_reward():
    agent = DQNAgent(2, 3, AgentConfig(gamma=0.0, batch_size=1), seed=1)
    t = Transition(np.array([0.3, 0.7]), 2, 0.75, np.array([0.3, 0.7]))
    for _ in range(500):
        agent.learn(t)
    assert agent.q_values(t.obs)[2] == pytest.approx(0.75, abs=1e-3)


def test_no_update_below_batch_size():
    agent = DQNAgent(2, 2, AgentConfig(batch_size=32), seed=0)
    before = [p.copy() for p in agent.net.params]
    for i in range(31):
        assert agent.learn(Transition(np.ones(2), i % 2, 1.0, np.ones(2))) is None
    assert all(np.array_equal(a, b) for a, b in zip(before, agent.net.params))
    assert agent.learn(Transition(np.ones(2), 0, 1.0, np.ones(2))) is not None


def test_target_sync_interval():
    agent = DQNAgent(1, 2, AgentConfig(batch_size=1, target_sync=5), seed=0)
    for i in range(4):
        agent.learn(Transition(np.ones(1), 0, 1.0, np.ones(1)))
    assert not np.array_equal(agent.target.params[0], agent.net.params[0])
    agent.learn(Transition(np.ones(1), 0, 1.0, np.ones(1)))
    assert all(np.array_equal(a, b) for a, b in zip(agent.target.params, agent.net.params))


def test_replay_fifo_eviction():
    buf = ReplayBuffer(3, 1)
    for i in range(5):
        buf.append(Transition(np.array([i]), 0, float(i), np.array([i])))
    assert len(buf) == 3
    assert buf.oldest().reward == 2.0
    assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]


def test_rejects_nonfinite_reward():
    with pytest.raises(ValueError):
        DQNAgent(1, 2).learn(Transition(np.ones(1), 0, float("nan"), np.ones(1)))


def test_config_validation():
    for bad in (dict(epsilon_start=1.5), dict(gamma=1.0), dict(replay_capacity=0), dict(epsilon_mode="cosine")):
        with pytest.raises(ValueError):
            AgentConfig(**bad)


def test_epsilon_schedules():
    lin = DQNAgent(1, 2, seed=0, total_steps=100)
    assert lin.epsilon(0) == 1.0
    assert lin.epsilon(30) == pytest.approx(1.0 - 0.95 * 0.5)
    assert lin.epsilon(60) == pytest.approx(0.05) == lin.epsilon(99)
    const = DQNAgent(1, 2, AgentConfig(epsilon_mode="constant", epsilon_start=0.2), total_steps=100)
    assert {const.epsilon(k) for k in range(100)} == {0.2}


def test_bandit_learns_dominant_action():
    for seed in range(3):
        agent = DQNAgent(1, 2, seed=seed)
        _, greedy_picks = train_bandit(BanditEnv((0.0, 1.0), seed=seed), agent, 300)
        assert greedy_picks[-1] == 1


def test_weights_round_trip(tmp_path):
    agent = DQNAgent(3, 9, seed=5)
    for i in range(40):
        agent.learn(Transition(np.array([i, 1.0, 0.5]), i % 9, 0.1 * i, np.array([i + 1, 1.0, 0.5])))
    path = tmp_path / "q.txt"
    agent.save(path)
    other = DQNAgent(3, 9, seed=99)
    other.load(path)
    obs = np.array([0.4, 0.5, 0.6])
    assert np.array_equal(agent.q_values(obs), other.q_values(obs))
    text = path.read_text()
    assert text.startswith("#autofabric-qnet-v1\nsizes 3 64 9\narray 3 64\n")
    with pytest.raises(SchemaMismatch):
        DQNAgent(2, 9).load(path)
    with pytest.raises(SchemaMismatch):
        parse_weights("garbage")


def test_mlp_gradient_matches_finite_difference():
    rng = np.random.default_rng(0)
    net = MLP((3, 5, 2), rng)
    x = rng.normal(size=(4, 3))
    g_out = rng.normal(size=(4, 2))
    _, acts = net.forward(x, keep=True)
    grads = net.backward(acts, g_out)
    eps = 1e-6
    for p, g in zip(net.params, grads):
        idx = tuple(rng.integers(0, s) for s in p.shape)
        old = p[idx]
        p[idx] = old + eps
        up = float((net.forward(x) * g_out).sum())
        p[idx] = old - eps
        down = float((net.forward(x) * g_out).sum())
        p[idx] = old
        assert g[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-6)


# action spaces -----------------------------------------------------------------

def test_decode_bijections():
    assert len(PARAM_ACTIONS) == 81 and len(ADMISSION_ACTIONS) == 9 and len(CONTRACT_ACTIONS) == 2
    assert [encode_param(decode_param(i)) for i in range(81)] == list(range(81))
    assert len(set(PARAM_ACTIONS)) == 81
    assert [encode_admission(decode_admission(i)) for i in range(9)] == list(range(9))
    assert decode_param(0) == (300, 2.0, 0.5, 16.0)
    assert decode_param(DEFAULT_PARAM_ACTION) == (500, 2.0, 2.0, 16.0)
    assert decode_admission(0) == (1.0, 1.0)
    assert CONTRACT_ACTIONS == (Variant.VANILLA, Variant.DELTA)


# environments ------------------------------------------------------------------------

def test_param_env_reward_and_causality():
    env = ParamTuningEnv(seed=0, step_duration=2.0, schedule=RateSchedule(100, (300.0,)))
    env.reset()
    r = env.step(encode_param((300, 16, 1, 16)))
    assert r.reward == pytest.approx(r.metrics.overall_tps / r.metrics.send_rate)
    assert r.obs.tolist() == [r.metrics.overall_tps, r.metrics.send_rate]
    assert env.sim.config.as_tuple() == (300, 16, 1, 16)
    with pytest.raises(ValueError):
        env.step(81)


def test_contract_env_writes_variant(tmp_path):
    path = tmp_path / "client.ini"
    env = ContractEnv(seed=0, step_duration=1.0, client_config_path=path)
    env.reset()
    env.step(1)
    assert ClientConfig.load(path).variant is Variant.DELTA
    env.step(0)
    assert ClientConfig.load(path).variant is Variant.VANILLA


def test_contract_env_delta_is_write_only():
    env = ContractEnv(seed=0, step_duration=1.0)
    env.reset()
    r = env.step(1)
    assert r.metrics.aborted_mvcc == 0
    assert r.reward == pytest.approx(r.metrics.success_tps / r.metrics.send_rate)
    assert env.phase_label(0) == "update" and env.phase_label(100) == "compute"


def test_admission_env_throttle_and_identity():
    a = AdmissionEnv(seed=2, step_duration=1.0)
    b = AdmissionEnv(seed=2, step_duration=1.0)
    a.reset(), b.reset()
    ra, rb = a.step(0), b.step(None)
    assert ra.metrics == rb.metrics
    r = a.step(encode_admission((0.4, 1.0)))
    assert r.metrics.send_rate == pytest.approx(1000, rel=0.05)
    assert 0 < r.reward <= 1 and r.obs[2] == r.reward


def test_train_rejects_zero_steps_and_is_deterministic():
    with pytest.raises(ValueError):
        train(ContractEnv(step_duration=1.0), DQNAgent(2, 2), 0)

    def go():
        env = ContractEnv(seed=4, step_duration=1.0, phase_length=5)
        return [(r.action, r.reward, r.epsilon) for r in train(env, DQNAgent(2, 2, obs_scale=env.obs_scale,
                                                                            seed=4), 30)]
    assert go() == go()


def test_constant_full_exploration_is_uniform():
    env = AdmissionEnv(seed=0, step_duration=0.2)
    agent = DQNAgent(3, 9, AgentConfig(epsilon_mode="constant", epsilon_start=1.0), obs_scale=env.obs_scale)
    counts = np.bincount([r.action for r in train(env, agent, 270)], minlength=9)
    assert chi2_uniform(counts) < CHI2_CRIT_DF8_P001


def test_baseline_holds_setting():
    env = ContractEnv(seed=0, step_duration=1.0)
    trace = run_baseline(env, 3, 1)
    assert [r.action for r in trace] == [1, 1, 1]
    assert all(r.metrics.aborted_mvcc == 0 for r in trace)
