"""Hierarchical Double DQN over the arena's macro-actions.

The Q-network is a plain numpy MLP (ReLU hidden layers, linear output) trained with
Adam on the mean squared TD error. Controllers wrap anything that can pick a
macro-action so evaluation, data collection and the embodied runs share one rollout.
"""

import csv
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from app.arena import EnvKind, MacroAction, Status, bearing_error, observe
from app.errors import (
    ArtifactError,
    ConfigurationError,
    NumericError,
    TrainingDivergedError,
)

logger = logging.getLogger(__name__)

N_ACTIONS = len(MacroAction)
STATE_SIZE = 10
CHECKPOINT_MAGIC = b"SWQN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    gamma: float = 0.975
    beta: float = 8.0
    batch_size: int = 128
    warmup: int = 1000
    target_update: int = 300
    epsilon0: float = 1.0
    epsilon_decay: float = 0.99
    buffer_capacity: int = 10000
    hidden: tuple[int, ...] = (200, 200, 200)
    env_distribution: dict = field(
        default_factory=lambda: {EnvKind.FLAT: 0.3, EnvKind.SLOPE: 0.2, EnvKind.HOLE: 0.5}
    )

    def __post_init__(self):
        total = sum(self.env_distribution.values())
        if not self.env_distribution or abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"env distribution must sum to 1, got {total}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.batch_size < 1 or self.target_update < 1 or self.buffer_capacity < 1:
            raise ConfigurationError("batch size, target update and capacity must be positive")

    @property
    def layer_sizes(self):
        return (STATE_SIZE, *self.hidden, N_ACTIONS)


@dataclass
class QFunction:
    weights: list
    biases: list

    @classmethod
    def initialize(cls, sizes, rng):
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes):
        return cls(
            [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
            [np.zeros(b) for b in sizes[1:]],
        )

    @property
    def sizes(self):
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def copy(self):
        return QFunction([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self):
        return np.concatenate([p.ravel() for p in (*self.weights, *self.biases)])

    @classmethod
    def from_flat(cls, sizes, values):
        params = cls.zeros(sizes)
        expected = sum(a.size for a in (*params.weights, *params.biases))
        if expected != len(values):
            raise ArtifactError(f"expected {expected} parameters, found {len(values)}")
        offset = 0
        for array in (*params.weights, *params.biases):
            array[...] = values[offset : offset + array.size].reshape(array.shape)
            offset += array.size
        return params



def _forward(params, states):
    """Activations per layer; the last entry is the linear output."""
    activations = [states]
    pre = []
    h = states
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        activations.append(h)
    return activations, pre


def q_forward(params, state):
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        raise NumericError(f"non-finite network input: {state}")
    activations, _ = _forward(params, np.atleast_2d(state))
    out = activations[-1]
    return out[0] if state.ndim == 1 else out


def q_gradients(params, states, actions, targets):
    """Mean squared TD error on the taken actions and its parameter gradients."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.asarray(actions, dtype=int)
    targets = np.asarray(targets, dtype=float)
    n = len(actions)

    activations, pre = _forward(params, states)
    chosen = activations[-1][np.arange(n), actions]
    error = chosen - targets
    loss = float(np.mean(error**2))

    delta = np.zeros_like(activations[-1])
    delta[np.arange(n), actions] = 2.0 * error / n

    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    for i in reversed(range(len(params.weights))):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (pre[i - 1] > 0.0)
    return loss, QFunction(grad_w, grad_b)


class Adam(object):
    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = QFunction.zeros(params.sizes)
        self.v = QFunction.zeros(params.sizes)

    def step(self, params, grads):
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        groups = zip(
            (*params.weights, *params.biases),
            (*grads.weights, *grads.biases),
            (*self.m.weights, *self.m.biases),
            (*self.v.weights, *self.v.biases),
        )
        for p, g, m, v in groups:
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def boltzmann_probs(q, beta):
    z = beta * np.asarray(q, dtype=float)
    z = z - z.max()
    weights = np.exp(z)
    return weights / weights.sum()


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer(object):
    def __init__(self, capacity=10000):
        self.capacity = capacity
        self.transitions = deque(maxlen=capacity)

    def __len__(self):
        return len(self.transitions)

    def add(self, state, action, reward, next_state, done):
        self.transitions.append(
            (
                np.asarray(state, dtype=float),
                int(action),
                float(reward),
                np.asarray(next_state, dtype=float),
                bool(done),
            )
        )

    def sample(self, size, rng):
        idx = rng.choice(len(self.transitions), size=size, replace=len(self.transitions) < size)
        picked = [self.transitions[i] for i in idx]
        states, actions, rewards, next_states, dones = zip(*picked)
        return Batch(
            np.stack(states),
            np.array(actions, dtype=int),
            np.array(rewards, dtype=float),
            np.stack(next_states),
            np.array(dones, dtype=bool),
        )


def td_target(batch, gamma, params, target_params):
    """r + gamma * Q(s', argmax_a Q'(s', a)); terminal samples keep r alone."""
    next_states = np.atleast_2d(batch.next_states)
    greedy = np.argmax(q_forward(target_params, next_states), axis=1)
    bootstrap = q_forward(params, next_states)[np.arange(len(greedy)), greedy]
    mask = 1.0 - np.asarray(batch.dones, dtype=float)
    return np.asarray(batch.rewards, dtype=float) + gamma * mask * bootstrap


def select_action(params, state, beta, epsilon, buffer_size, warmup, rng, epsilon_decay):
    """Returns (action, epsilon)."""
    warmed = buffer_size >= warmup
    if warmed and rng.random() < 1.0 - epsilon:
        probs = boltzmann_probs(q_forward(params, state), beta)
        return MacroAction(int(rng.choice(N_ACTIONS, p=probs))), epsilon

    action = MacroAction(int(rng.integers(N_ACTIONS)))
    if warmed:
        epsilon *= epsilon_decay
    return action, epsilon


class QController(object):
    """Boltzmann sampling over Q with exploration switched off."""

    def __init__(self, params, beta):
        self.params = params
        self.beta = beta

    def act(self, state, observation, rng):
        probs = boltzmann_probs(q_forward(self.params, observation), self.beta)
        return MacroAction(int(rng.choice(N_ACTIONS, p=probs)))


class ScriptedPusher(object):
    """Geometric oracle: face the goal, then push straight in.

    A box whose centre has slid more than `reach` off the agent's heading axis is
    re-acquired with Approach before pushing on.
    """

    def __init__(self, tolerance=0.05, reach=0.2):
        self.tolerance = tolerance
        self.reach = reach

    def act(self, state, observation, rng):
        if abs(bearing_error(state.agent, state.goal_xy)) > self.tolerance:
            return MacroAction.ANGLE_TOWARDS_GOAL
        if not state.box_fallen and abs(lateral_offset(state)) > self.reach:
            return MacroAction.APPROACH
        return MacroAction.PUSH_IN


def lateral_offset(state):
    """Signed distance of the box centre left of the agent's heading axis."""
    rel = state.box.xy - state.agent.xy
    return math.cos(state.agent.yaw) * rel[1] - math.sin(state.agent.yaw) * rel[0]


class ConstantController(object):
    def __init__(self, action):
        self.action = MacroAction(action)

    def act(self, state, observation, rng):
        return self.action


@dataclass
class Trajectory:
    kind: EnvKind
    observations: list
    actions: list
    rewards: list
    status: Status
    final_state: object = None

    @property
    def success(self):
        return self.status is Status.SUCCESS

    @property
    def total_reward(self):
        return float(sum(self.rewards))


def rollout(controller, arena, kind, rng, initial=None):
    """Run one episode; observations are the ones each action was chosen from."""
    if initial is None:
        state, observation = arena.reset(kind, rng)
    else:
        state, observation = initial, observe(initial)

    observations, actions, rewards = [], [], []
    status = Status.RUNNING
    while status is Status.RUNNING:
        action = controller.act(state, observation, rng)
        observations.append(observation)
        actions.append(action)
        state, observation, value, status = arena.step(state, action)
        rewards.append(value)
    return Trajectory(EnvKind(kind), observations, actions, rewards, status, state)


@dataclass(frozen=True)
class TrainingRecord:
    episode: int
    env_kind: str
    reward: float
    success: bool
    epsilon: float
    buffer_size: int


class Trainer(object):
    """Keeps the networks, optimizer, replay buffer and exploration rate between calls."""

    def __init__(self, arena_factory, config, rng, params=None):
        self.arena_factory = arena_factory
        self.config = config
        self.rng = rng
        if params is None:
            params = QFunction.initialize(config.layer_sizes, rng)
        self.params = params
        self.target = self.params.copy()
        self.optimizer = Adam(self.params, config.learning_rate)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.epsilon = config.epsilon0
        self.gradient_steps = 0
        self.episodes_done = 0
        self.kinds = sorted(config.env_distribution, key=lambda k: EnvKind(k).value)
        self.kind_probs = np.array([config.env_distribution[k] for k in self.kinds], dtype=float)

    def _learn(self):
        config = self.config
        batch = self.buffer.sample(config.batch_size, self.rng)
        targets = td_target(batch, config.gamma, self.params, self.target)
        loss, grads = q_gradients(self.params, batch.states, batch.actions, targets)
        if not math.isfinite(loss):
            logger.error(f"Non-finite loss {loss} after {self.gradient_steps} gradient steps")
            raise TrainingDivergedError(self.episodes_done, self.gradient_steps, loss)
        self.optimizer.step(self.params, grads)
        self.gradient_steps += 1
        if self.gradient_steps % config.target_update == 0:
            self.target = self.params.copy()
        return loss

    def episode(self):
        config = self.config
        kind = EnvKind(self.kinds[int(self.rng.choice(len(self.kinds), p=self.kind_probs))])
        arena = self.arena_factory(kind)
        state, observation = arena.reset(kind, self.rng)

        total = 0.0
        status = Status.RUNNING
        while status is Status.RUNNING:
            action, self.epsilon = select_action(
                self.params,
                observation,
                config.beta,
                self.epsilon,
                len(self.buffer),
                config.warmup,
                self.rng,
                config.epsilon_decay,
            )
            state, next_observation, value, status = arena.step(state, action)
            done = status is not Status.RUNNING
            self.buffer.add(observation, action, value, next_observation, done)
            total += value
            observation = next_observation
            if len(self.buffer) >= max(config.batch_size, config.warmup):
                self._learn()

        record = TrainingRecord(
            episode=self.episodes_done,
            env_kind=kind.value,
            reward=total,
            success=status is Status.SUCCESS,
            epsilon=self.epsilon,
            buffer_size=len(self.buffer),
        )
        self.episodes_done += 1
        return record

    def run(self, episodes):
        log = []
        for _ in range(episodes):
            log.append(self.episode())
        return log


def train(arena_factory, config, episodes, rng, params=None):
    """Train for `episodes` episodes; returns (params, training log)."""
    if episodes <= 0:
        if params is None:
            params = QFunction.initialize(config.layer_sizes, rng)
        return params, []

    logger.info(f"Starting training for {episodes} episodes")
    start = time.time()
    trainer = Trainer(arena_factory, config, rng, params=params)
    log = trainer.run(episodes)
    successes = sum(r.success for r in log)
    logger.info(
        f"Training completed in {time.time() - start:.2f} seconds, "
        f"{successes}/{episodes} successful episodes, {trainer.gradient_steps} gradient steps"
    )
    return trainer.params, log


def train_individual(arena_factory, config, episodes, rng):
    """One network per env kind, each trained on a single-kind distribution."""
    trained = {}
    for kind in sorted(config.env_distribution, key=lambda k: EnvKind(k).value):
        single = replace(config, env_distribution={EnvKind(kind): 1.0})
        trained[EnvKind(kind)] = train(arena_factory, single, episodes, rng)
    return trained


def evaluate(controller, arena, kind, episodes, rng, beta=8.0):
    """Greedy-ish evaluation without learning; returns (mean reward, success rate)."""
    if isinstance(controller, QFunction):
        controller = QController(controller, beta)
    rewards, successes = [], []
    for _ in range(episodes):
        trajectory = rollout(controller, arena, kind, rng)
        rewards.append(trajectory.total_reward)
        successes.append(trajectory.success)
    return float(np.mean(rewards)), float(np.mean(successes))


def alternate_train_test(arena_factory, config, blocks, rng, block_size=20):
    """Alternate blocks of training episodes with blocks of evaluation episodes.

    Returns (params, training log, evaluation log) where the evaluation log holds one
    (block, env kind, mean reward, success rate) tuple per block and env kind.
    """
    trainer = Trainer(arena_factory, config, rng)
    train_log, test_log = [], []
    for block in range(blocks):
        train_log.extend(trainer.run(block_size))
        controller = QController(trainer.params, config.beta)
        for kind in trainer.kinds:
            kind = EnvKind(kind)
            share = max(1, round(block_size * config.env_distribution[kind]))
            mean_reward, rate = evaluate(controller, arena_factory(kind), kind, share, rng)
            test_log.append((block, kind.value, mean_reward, rate))
        logger.info(f"Block {block}: evaluation {test_log[-len(trainer.kinds):]}")
    return trainer.params, train_log, test_log


def write_training_log(path, log):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["episode", "env_kind", "reward", "success", "epsilon", "buffer_size"])
        for r in log:
            writer.writerow(
                [
                    r.episode,
                    r.env_kind,
                    repr(r.reward),
                    int(r.success),
                    repr(r.epsilon),
                    r.buffer_size,
                ]
            )


@dataclass
class Checkpoint:
    params: QFunction
    seed: int
    episodes: int


def save_checkpoint(path, params, seed, episodes):
    """Layout: magic, u32 version, u32 layer count, u32 sizes, u64 seed, u64 episodes,
    then every weight matrix and bias vector as little-endian float64."""
    sizes = params.sizes
    header = (
        CHECKPOINT_MAGIC
        + np.array([CHECKPOINT_VERSION, len(sizes), *sizes], dtype="<u4").tobytes()
        + np.array([seed, episodes], dtype="<u8").tobytes()
    )
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(params.flat().astype("<f8").tobytes())


def load_checkpoint(path):
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as e:
        raise ArtifactError(f"cannot read checkpoint {path}: {e}") from e

    if blob[:4] != CHECKPOINT_MAGIC or len(blob) < 12:
        raise ArtifactError(f"{path} is not a Q-network checkpoint")
    version, count = (int(v) for v in np.frombuffer(blob, dtype="<u4", count=2, offset=4))
    if version != CHECKPOINT_VERSION:
        raise ArtifactError(f"unsupported checkpoint version {version}")
    if count < 2:
        raise ArtifactError(f"{path} declares {count} layer sizes")

    offset = 12
    header_end = offset + 4 * count + 16
    if len(blob) < header_end:
        raise ArtifactError(f"{path} is truncated inside its header")
    sizes = tuple(int(s) for s in np.frombuffer(blob, dtype="<u4", count=count, offset=offset))
    offset += 4 * count
    seed, episodes = (int(v) for v in np.frombuffer(blob, dtype="<u8", count=2, offset=offset))
    offset += 16

    if any(s < 1 for s in sizes):
        raise ArtifactError(f"{path} declares an empty layer: {sizes}")
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if len(blob) - offset != 8 * expected:
        raise ArtifactError(
            f"{path} holds {len(blob) - offset} parameter bytes, expected {8 * expected}"
        )
    values = np.frombuffer(blob, dtype="<f8", offset=offset).astype(float)
    return Checkpoint(QFunction.from_flat(sizes, values), seed, episodes)

