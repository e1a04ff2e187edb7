"""Deep Q-learning on the pit mazes: replay buffer, epsilon-greedy
exploration, a frozen target network and the squared TD loss."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from . import maze as mz
from .autodiff import Tensor
from .layers import Network, q_network_spec
from .optim import Adam

logger = logging.getLogger(__name__)

NOT_STARTED = None


class ReplayBuffer:
    """Fixed-capacity ring of transitions stored column-wise."""

    def __init__(self, capacity: int, width: int):
        self.capacity = capacity
        self.width = width
        self.states = np.zeros((capacity, width))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, width))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, action: int, reward: float, next_state, terminal: bool) -> None:
        state = np.asarray(state, dtype=np.float64)
        next_state = np.asarray(next_state, dtype=np.float64)
        if state.shape != (self.width,) or next_state.shape != (self.width,):
            raise ValueError(f"encodings must have width {self.width}")
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Uniform draw with replacement."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "states": self.states[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_states": self.next_states[idx],
            "terminals": self.terminals[idx],
        }


@dataclass(frozen=True)
class EpsilonSchedule:
    total_timesteps: int
    start: float = 1.0
    final: float = 0.02
    fraction: float = 0.1

    def __call__(self, t: int) -> float:
        ramp = self.fraction * self.total_timesteps
        if ramp <= 0 or t >= ramp:
            return self.final
        return self.start + (self.final - self.start) * (t / ramp)


def epsilon_at(sched: EpsilonSchedule, t: int) -> float:
    return sched(t)


class Agent:
    def __init__(self, net: Network, lr: float = 8e-4, gamma: float = 0.99):
        self.online = net
        self.target = net.copy()
        self.optimizer = Adam(net.parameters(), lr=lr)
        self.gamma = gamma
        self.timestep = 0
        self.updates = 0

    def q_values(self, encoding) -> np.ndarray:
        return self.online.predict(encoding)[0]


def select_action(agent: Agent, encoding, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    explore = rng.random() < eps
    if explore:
        return int(rng.integers(mz.N_ACTIONS))
    return int(np.argmax(agent.q_values(encoding)))


def td_targets(agent: Agent, batch: dict[str, np.ndarray]) -> np.ndarray:
    """r + gamma * max_a' Q_target(s', a'), or just r at termination."""
    if len(batch["rewards"]) == 0:
        raise ValueError("empty batch")
    q_next = agent.target.predict(batch["next_states"]).max(axis=1)
    return batch["rewards"] + agent.gamma * np.where(batch["terminals"], 0.0, q_next)


def td_loss(agent: Agent, batch: dict[str, np.ndarray]) -> Tensor:
    targets = td_targets(agent, batch)
    q = agent.online.forward(Tensor(batch["states"]))
    onehot = np.eye(q.shape[1])[batch["actions"]]
    q_taken = ad.sum(ad.multiply(q, Tensor(onehot)), axis=1)
    return ad.mean(ad.square(ad.subtract(q_taken, Tensor(targets))))


def dqn_train_step(
    agent: Agent,
    buffer: ReplayBuffer,
    rng: np.random.Generator,
    batch_size: int = 64,
    learning_starts: int = 30_000,
) -> Optional[float]:
    """One Adam step on the online network; returns the pre-step batch loss.

    Returns ``NOT_STARTED`` (None) until the buffer holds
    ``learning_starts`` transitions.
    """
    if len(buffer) < max(learning_starts, batch_size, 1):
        return NOT_STARTED
    batch = buffer.sample(batch_size, rng)
    agent.optimizer.zero_grad()
    loss = td_loss(agent, batch)
    value = loss.item()
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite TD loss; last batch: {batch}")
    ad.backward(loss)
    agent.optimizer.step()
    agent.online.project()
    agent.updates += 1
    return value


def sync_target(agent: Agent) -> None:
    agent.target.load_state(agent.online.state())


@dataclass
class DQNConfig:
    level: int = 1
    encoding: str = "coordinates"
    arch: str = "urbf"
    latent: int = 16
    nnpi: int = 20
    init_range: tuple[float, float] = (0.0, 8.0)
    learn_spreads: bool = True
    lr: float = 8e-4
    gamma: float = 0.99
    total_timesteps: int = 150_000
    learning_starts: int = 30_000
    buffer_size: int = 100_000
    batch_size: int = 64
    sync_period: int = 1000
    eps_start: float = 1.0
    eps_final: float = 0.02
    exploration_fraction: float = 0.1
    seed: int = 0

    def network_spec(self):
        width, _ = mz.encoder(self.encoding)
        return q_network_spec(
            self.arch, width, self.latent, mz.N_ACTIONS, self.nnpi, self.init_range,
            learn_spreads=self.learn_spreads,
        )


@dataclass
class DQNRun:
    episode_returns: list[float] = field(default_factory=list)
    episode_end_steps: list[int] = field(default_factory=list)
    episode_epsilons: list[float] = field(default_factory=list)
    total_reward: float = 0.0
    timesteps: int = 0
    param_count: int = 0
    losses: list[float] = field(default_factory=list)

    @property
    def avg_reward_per_timestep(self) -> float:
        return self.total_reward / self.timesteps if self.timesteps else 0.0

    def final_return(self, fraction: float = 0.1) -> float:
        """Mean return over the last ``fraction`` of completed episodes."""
        n = len(self.episode_returns)
        if n == 0:
            return 0.0
        k = max(1, math.ceil(fraction * n))
        return float(np.mean(self.episode_returns[-k:]))

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode_index", "end_timestep", "return", "epsilon"])
            for i, (t, r, e) in enumerate(zip(self.episode_end_steps, self.episode_returns, self.episode_epsilons)):
                w.writerow([i, t, r, repr(e)])


def train_dqn(
    config: DQNConfig,
    policy: Optional[Callable[[mz.MazeInstance, mz.EpisodeState], int]] = None,
) -> DQNRun:
    """Run ``config.total_timesteps`` environment steps on one maze.

    ``policy`` replaces the network's action choice (and disables learning),
    which is useful for scripted sanity checks.
    """
    maze = mz.generate_maze(config.level, config.seed)
    width, encode = mz.encoder(config.encoding)
    init_rng, act_rng, replay_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3))
    agent = Agent(Network(config.network_spec(), init_rng), lr=config.lr, gamma=config.gamma)
    buffer = ReplayBuffer(config.buffer_size, width)
    sched = EpsilonSchedule(config.total_timesteps, config.eps_start, config.eps_final, config.exploration_fraction)
    run = DQNRun(param_count=agent.online.param_count())

    # greedy actions are cached per encoding while the online network is unchanged
    greedy_cache: dict[bytes, int] = {}
    state = mz.reset(maze)
    enc = encode(maze, state)
    ep_return = 0.0
    for t in range(config.total_timesteps):
        eps = sched(t)
        if policy is not None:
            action = policy(maze, state)
        elif act_rng.random() < eps:
            action = int(act_rng.integers(mz.N_ACTIONS))
        else:
            key = enc.tobytes()
            action = greedy_cache.get(key)
            if action is None:
                action = greedy_cache[key] = int(np.argmax(agent.q_values(enc)))
        next_state, reward = mz.step(maze, state, action)
        next_enc = encode(maze, next_state)
        buffer.add(enc, action, reward, next_enc, next_state.cause in ("goal", "pit"))
        run.total_reward += reward
        ep_return += reward
        agent.timestep = t + 1

        if policy is None:
            loss = dqn_train_step(agent, buffer, replay_rng, config.batch_size, config.learning_starts)
            if loss is not NOT_STARTED:
                greedy_cache.clear()
                if agent.updates % 100 == 0:
                    run.losses.append(loss)
        if (t + 1) % config.sync_period == 0:
            sync_target(agent)

        if next_state.terminal:
            run.episode_returns.append(ep_return)
            run.episode_end_steps.append(t + 1)
            run.episode_epsilons.append(eps)
            state = mz.reset(maze)
            enc = encode(maze, state)
            ep_return = 0.0
        else:
            state, enc = next_state, next_enc
    run.timesteps = config.total_timesteps
    logger.debug("dqn %s: %d episodes, avg reward/step %.4f", asdict(config), len(run.episode_returns),
                 run.avg_reward_per_timestep)
    return run
