import numpy as np
import pytest

from urbf import maze as mz
from urbf.dqn import (
    NOT_STARTED,
    Agent,
    DQNConfig,
    EpsilonSchedule,
    ReplayBuffer,
    dqn_train_step,
    epsilon_at,
    select_action,
    sync_target,
    td_loss,
    td_targets,
    train_dqn,
)
from urbf.layers import LayerSpec, Network, NetworkSpec, q_network_spec


def constant_q_agent(values, gamma=0.99):
    """Agent whose networks ignore the input and output ``values``."""
    net = Network(NetworkSpec(2, (LayerSpec("affine", 4, "none"),)), 0)
    net.layers[0].W.data[:] = 0.0
    net.layers[0].b.data[:] = values
    return Agent(net, lr=1e-3, gamma=gamma)


def filled_buffer(n, rng, terminal=None, reward=None):
    buf = ReplayBuffer(max(n, 1), 2)
    for _ in range(n):
        s, s2 = rng.integers(0, 9, 2), rng.integers(0, 9, 2)
        r = rng.choice([-100.0, 0.0, 100.0]) if reward is None else reward
        t = bool(r != 0) if terminal is None else terminal
        buf.add(s, int(rng.integers(4)), r, s2, t)
    return buf


class TestEpsilon:
    def test_endpoints_and_midpoint(self):
        sched = EpsilonSchedule(50_000)
        assert epsilon_at(sched, 0) == 1.0
        assert epsilon_at(sched, 2_500) == pytest.approx(0.51, abs=1e-12)
        assert epsilon_at(sched, 5_000) == 0.02
        assert epsilon_at(sched, 49_999) == 0.02

    def test_monotone_and_bounded(self):
        sched = EpsilonSchedule(150_000)
        ts = np.sort(np.random.default_rng(0).integers(0, 300_000, 1000))
        eps = [sched(int(t)) for t in ts]
        assert all(0.02 <= e <= 1.0 for e in eps)
        assert all(b <= a for a, b in zip(eps, eps[1:]))


class TestActionSelection:
    def test_full_exploration_is_uniform(self):
        agent = constant_q_agent([0, 0, 0, 9])
        rng = np.random.default_rng(0)
        counts = np.bincount([select_action(agent, np.zeros(2), 1.0, rng) for _ in range(10_000)], minlength=4)
        chi2 = np.sum((counts - 2500.0) ** 2 / 2500.0)
        assert chi2 < 16.27  # 3 degrees of freedom, p = 0.001

    def test_tie_goes_to_lowest_index(self):
        agent = constant_q_agent([1, 5, 5, 0])
        assert select_action(agent, np.zeros(2), 0.0, np.random.default_rng(0)) == 1

    def test_unique_argmax(self):
        agent = constant_q_agent([0, 0, 0, 7])
        assert select_action(agent, np.zeros(2), 0.0, np.random.default_rng(0)) == 3


class TestTargets:
    def batch(self, reward, terminal):
        return {
            "states": np.zeros((1, 2)),
            "actions": np.zeros(1, dtype=int),
            "rewards": np.array([reward]),
            "next_states": np.ones((1, 2)),
            "terminals": np.array([terminal]),
        }

    def test_terminal(self):
        assert td_targets(constant_q_agent([1, 2, 3, 4]), self.batch(100.0, True))[0] == 100.0

    def test_bootstrap(self):
        target = td_targets(constant_q_agent([1, 2, 3, 4]), self.batch(0.0, False))[0]
        assert target == pytest.approx(3.96, abs=1e-12)

    def test_myopic(self):
        agent = constant_q_agent([1, 2, 3, 4], gamma=0.0)
        for r in (-100.0, 0.0, 100.0):
            assert td_targets(agent, self.batch(r, False))[0] == r

    def test_uses_frozen_network(self):
        agent = constant_q_agent([1, 2, 3, 4])
        agent.online.layers[0].b.data[:] = 50.0
        assert td_targets(agent, self.batch(0.0, False))[0] == pytest.approx(3.96, abs=1e-12)

    def test_empty_batch(self):
        b = self.batch(0.0, False)
        with pytest.raises(ValueError):
            td_targets(constant_q_agent([0, 0, 0, 0]), {k: v[:0] for k, v in b.items()})


class TestTrainStep:
    def agent(self, lr=1e-3):
        return Agent(Network(q_network_spec("urbf", 2, 8), 0), lr=lr)

    def test_not_started_before_threshold(self):
        agent = self.agent()
        buf = filled_buffer(100, np.random.default_rng(0))
        before = agent.online.state()
        assert dqn_train_step(agent, buf, np.random.default_rng(0), 64, learning_starts=101) is NOT_STARTED
        assert all(np.array_equal(a, b) for a, b in zip(before, agent.online.state()))

    def test_zero_loss_case(self):
        agent = constant_q_agent([0, 0, 0, 0])
        buf = filled_buffer(50, np.random.default_rng(0), terminal=True, reward=0.0)
        assert dqn_train_step(agent, buf, np.random.default_rng(0), 16, learning_starts=50) == 0.0

    def test_zero_learning_rate(self):
        agent = self.agent(lr=0.0)
        buf = filled_buffer(200, np.random.default_rng(1))
        before = agent.online.state()
        expected = td_loss(agent, buf.sample(32, np.random.default_rng(5))).item()
        loss = dqn_train_step(agent, buf, np.random.default_rng(5), 32, learning_starts=200)
        assert loss == expected
        assert all(np.array_equal(a, b) for a, b in zip(before, agent.online.state()))

    def test_target_network_is_untouched_and_diverges(self):
        agent = self.agent()
        buf = filled_buffer(200, np.random.default_rng(2))
        frozen = agent.target.state()
        assert all(np.array_equal(a, b) for a, b in zip(frozen, agent.online.state()))
        sync_target(agent)
        loss = dqn_train_step(agent, buf, np.random.default_rng(0), 32, learning_starts=200)
        assert loss is not NOT_STARTED
        assert all(np.array_equal(a, b) for a, b in zip(frozen, agent.target.state()))
        assert any(not np.array_equal(a, b) for a, b in zip(agent.target.state(), agent.online.state()))
        assert all(p.grad is None for p in agent.target.parameters())

    def test_sync_copies_exactly(self):
        agent = self.agent()
        buf = filled_buffer(200, np.random.default_rng(3))
        for _ in range(3):
            dqn_train_step(agent, buf, np.random.default_rng(0), 32, learning_starts=200)
        sync_target(agent)
        probes = np.random.default_rng(0).uniform(0, 8, (25, 2))
        np.testing.assert_array_equal(agent.target.predict(probes), agent.online.predict(probes))
        agent.online.layers[0].W.data += 1.0
        assert not np.array_equal(agent.target.predict(probes), agent.online.predict(probes))


class TestReplayBuffer:
    def test_overwrites_oldest(self):
        buf = ReplayBuffer(3, 2)
        for i in range(5):
            buf.add([i, i], i % 4, float(i), [i, i + 1], False)
        assert len(buf) == 3
        assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]

    def test_samples_are_stored_transitions(self):
        buf = filled_buffer(40, np.random.default_rng(0))
        batch = buf.sample(64, np.random.default_rng(1))
        stored = {tuple(row) for row in np.column_stack([buf.states, buf.actions, buf.rewards])}
        drawn = np.column_stack([batch["states"], batch["actions"], batch["rewards"]])
        assert all(tuple(row) in stored for row in drawn)
        assert len(batch["rewards"]) == 64

    def test_width_checked(self):
        with pytest.raises(ValueError):
            ReplayBuffer(4, 2).add([0, 0, 0], 0, 0.0, [0, 0], False)

    def test_empty_sample(self):
        with pytest.raises(ValueError):
            ReplayBuffer(4, 2).sample(1, np.random.default_rng(0))


def test_scripted_pit_policy_reward_rate():
    seed = next(
        s for s in range(1000)
        if any(m.is_pit(p) for m in [mz.generate_maze(1, s)] for _, p in mz._neighbors(m.start))
    )
    maze = mz.generate_maze(1, seed)
    into_pit = next(a for a, p in mz._neighbors(maze.start) if maze.is_pit(p))
    run = train_dqn(DQNConfig(total_timesteps=300, seed=seed), policy=lambda m, s: into_pit)
    assert run.avg_reward_per_timestep == -100.0
    assert len(run.episode_returns) == 300 and set(run.episode_returns) == {-100.0}


def small_config(**kw):
    base = dict(total_timesteps=600, learning_starts=200, buffer_size=1000, batch_size=16, sync_period=100, seed=3)
    base.update(kw)
    return DQNConfig(**base)


def test_training_is_deterministic(tmp_path):
    a, b = train_dqn(small_config()), train_dqn(small_config())
    assert a.losses and a.losses == b.losses
    assert a.episode_returns == b.episode_returns
    assert a.avg_reward_per_timestep == b.avg_reward_per_timestep
    a.write_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "episode_index,end_timestep,return,epsilon"
    assert len(lines) == len(a.episode_returns) + 1


@pytest.mark.parametrize("arch,encoding", [("mlp", "matrix"), ("mrbf", "coordinates")])
def test_other_architectures_run(arch, encoding):
    run = train_dqn(small_config(arch=arch, encoding=encoding, total_timesteps=300))
    assert run.timesteps == 300 and run.param_count > 0


def test_final_return_window():
    run = train_dqn(small_config(total_timesteps=50), policy=lambda m, s: mz.RIGHT)
    assert run.final_return() == float(np.mean(run.episode_returns[-max(1, -(-len(run.episode_returns) // 10)):]))
