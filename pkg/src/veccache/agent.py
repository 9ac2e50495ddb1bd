"""Actor-critic caching agent trained with plain SGD and soft target tracking.

Networks are small fully connected stacks with hand-written forward and
backward passes (no autograd), which keeps every update rule explicit and lets
the test suite verify each gradient against central finite differences. The
actor squashes outputs into (0, 1); the critic head is linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .caching import Assignment, CachingProblem, feasible as _feasible, utility as _utility
from .refine import DEFAULT_ZERO_THRESHOLD, refine

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AgentConfig:
    """Learning hyperparameters; the documented defaults are desk-scale sane."""

    actor_lr: float = 1e-2
    critic_lr: float = 1e-2
    discount: float = 0.9
    target_blend: float = 0.01      # weight of the primary in each target update
    batch_size: int = 32
    episodes: int = 4000
    steps_per_episode: int = 20
    penalty: float = -100.0
    hidden: tuple[int, int] = (128, 128)
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_sigma_final: float = 0.02    # linear decay target over the whole run
    ou_mu: float = 0.0
    replay_capacity: int = 100_000
    zero_threshold: float = DEFAULT_ZERO_THRESHOLD
    reward_scale: float = 1.0       # rewards divided by this inside the critic
    dtype: str = "float64"

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must be in [0, 1]")
        if not 0.0 <= self.target_blend <= 1.0:
            raise ValueError("target_blend must be in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be > 0")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


class Mlp:
    """Fully connected network; hidden ReLU, output squashed to (0,1) or linear."""

    def __init__(self, sizes, output: str, rng: np.random.Generator,
                 dtype=np.float64):
        if output not in ("squash", "linear"):
            raise ValueError(f"unknown output activation {output!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.output = output
        self.dtype = np.dtype(dtype)
        self.weights = []
        self.biases = []
        last = len(self.sizes) - 2
        for k in range(len(self.sizes) - 1):
            fan_in = self.sizes[k]
            bound = 3e-3 if k == last else 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(self.sizes[k + 1], fan_in))
            b = rng.uniform(-bound, bound, size=self.sizes[k + 1])
            self.weights.append(w.astype(self.dtype))
            self.biases.append(b.astype(self.dtype))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def _apply_output(self, z):
        if self.output == "squash":
            return (np.tanh(z) + 1.0) / 2.0
        return z

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        for k in range(len(self.weights) - 1):
            x = np.maximum(x @ self.weights[k].T + self.biases[k], 0.0)
        z = x @ self.weights[-1].T + self.biases[-1]
        return self._apply_output(z)

    def _forward_cache(self, x):
        acts = [np.asarray(x, dtype=self.dtype)]
        for k in range(len(self.weights) - 1):
            acts.append(np.maximum(acts[-1] @ self.weights[k].T + self.biases[k], 0.0))
        z = acts[-1] @ self.weights[-1].T + self.biases[-1]
        return self._apply_output(z), z, acts

    def backward(self, x: np.ndarray, upstream: np.ndarray):
        """Gradients of sum(upstream * output) w.r.t. parameters and input.

        Returns ``(weight_grads, bias_grads, input_grad)`` with the same
        shapes as the parameters and ``x``.
        """
        y, z, acts = self._forward_cache(x)
        if self.output == "squash":
            delta = np.asarray(upstream, dtype=self.dtype) * (1.0 - np.tanh(z) ** 2) / 2.0
        else:
            delta = np.asarray(upstream, dtype=self.dtype)
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.biases)
        for k in range(len(self.weights) - 1, -1, -1):
            w_grads[k] = delta.T @ acts[k]
            b_grads[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k]) * (acts[k] > 0)
        input_grad = delta @ self.weights[0]
        return w_grads, b_grads, input_grad

    def sgd_step(self, w_grads, b_grads, lr: float):
        for w, g in zip(self.weights, w_grads):
            w -= lr * g.astype(self.dtype)
        for b, g in zip(self.biases, b_grads):
            b -= lr * g.astype(self.dtype)

    def get_flat(self) -> np.ndarray:
        parts = [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        return np.concatenate(parts)

    def set_flat(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=self.dtype)
        k = 0
        for w in self.weights:
            w[...] = vec[k:k + w.size].reshape(w.shape)
            k += w.size
        for b in self.biases:
            b[...] = vec[k:k + b.size]
            k += b.size
        if k != vec.size:
            raise ValueError(f"parameter vector length {vec.size}, expected {k}")

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "Mlp":
        dup = object.__new__(Mlp)
        dup.sizes = self.sizes
        dup.output = self.output
        dup.dtype = self.dtype
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup


class OuNoise:
    """Mean-reverting exploration noise, one component per action entry."""

    def __init__(self, dim: int, theta: float, sigma: float, mu: float,
                 rng: np.random.Generator, dtype=np.float64):
        self.dim = dim
        self.theta = theta
        self.sigma = sigma
        self.mu = mu
        self._rng = rng
        self.state = np.zeros(dim, dtype=np.dtype(dtype))

    def reset(self):
        self.state[...] = 0.0

    def sample(self) -> np.ndarray:
        drift = self.theta * (self.mu - self.state)
        shock = self.sigma * self._rng.standard_normal(self.dim)
        self.state = self.state + drift + shock
        return self.state.copy()


class ReplayMemory:
    """Fixed-capacity ring buffer of (state, action, reward, next state) tuples."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, dtype=np.float64):
        dt = np.dtype(dtype)
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim), dtype=dt)
        self.actions = np.zeros((capacity, action_dim), dtype=dt)
        self.rewards = np.zeros(capacity, dtype=dt)
        self.next_states = np.zeros((capacity, state_dim), dtype=dt)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, state, action, reward, next_state):
        k = self._cursor
        self.states[k] = state
        self.actions[k] = action
        self.rewards[k] = reward
        self.next_states[k] = next_state
        self._cursor = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} of {self._size} stored tuples")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx])


class DdpgAgent:
    """Primary and target actor-critic pair with replay memory and OU noise."""

    def __init__(self, state_dim: int, action_dim: int, cfg: AgentConfig,
                 rng: np.random.Generator):
        dt = cfg.np_dtype
        self.cfg = cfg
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.rng = rng
        actor_sizes = (state_dim, *cfg.hidden, action_dim)
        critic_sizes = (state_dim + action_dim, *cfg.hidden, 1)
        self.actor = Mlp(actor_sizes, "squash", rng, dt)
        self.critic = Mlp(critic_sizes, "linear", rng, dt)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.noise = OuNoise(action_dim, cfg.ou_theta, cfg.ou_sigma, cfg.ou_mu, rng, dt)
        self.memory = ReplayMemory(cfg.replay_capacity, state_dim, action_dim, dt)

    def act(self, state: np.ndarray, explore: bool = True) -> np.ndarray:
        if explore:
            return select_action(self.actor, state, self.noise)
        return self.actor.forward(np.asarray(state)[None, :])[0]

    def remember(self, state, action, reward, next_state):
        self.memory.push(state, action, reward, next_state)

    def train_batch(self) -> float | None:
        if len(self.memory) < self.cfg.batch_size:
            return None
        batch = self.memory.sample(self.cfg.batch_size, self.rng)
        return train_step(self, batch)


def select_action(actor: Mlp, state: np.ndarray, noise: OuNoise) -> np.ndarray:
    """Actor output plus one noise step, clamped to the unit box."""
    state = np.asarray(state, dtype=actor.dtype)
    if state.shape != (actor.in_dim,):
        raise ValueError(f"state shape {state.shape} != ({actor.in_dim},)")
    a = actor.forward(state[None, :])[0] + noise.sample()
    return np.clip(a, 0.0, 1.0)


def critic_value(critic: Mlp, state: np.ndarray, action: np.ndarray) -> float:
    """Scalar action value Q(state, action)."""
    state = np.asarray(state, dtype=critic.dtype)
    action = np.asarray(action, dtype=critic.dtype)
    if state.size + action.size != critic.in_dim:
        raise ValueError(
            f"state+action size {state.size + action.size} != critic input {critic.in_dim}")
    x = np.concatenate([state, action])[None, :]
    return float(critic.forward(x)[0, 0])


def reward(problem: CachingProblem, assignment: Assignment, cfg: AgentConfig) -> float:
    """System utility when the assignment is feasible, the penalty otherwise."""
    ok, _ = _feasible(problem, assignment)
    return _utility(problem, assignment) if ok else cfg.penalty


def train_step(agent: DdpgAgent, batch) -> float:
    """One SGD update of critic then actor from a sampled mini-batch.

    The critic descends the mean squared error against the frozen target
    value; the actor ascends the critic's value of its own actions. Returns
    the critic loss (in scaled reward units).
    """
    states, actions, rewards, next_states = (np.asarray(a) for a in batch)
    if states.shape[0] == 0:
        raise ValueError("empty training batch")
    cfg = agent.cfg
    v = states.shape[0]
    dt = agent.critic.dtype
    states = states.astype(dt)
    actions = actions.astype(dt)
    scaled_r = (rewards.astype(dt) / cfg.reward_scale)[:, None]
    next_states = next_states.astype(dt)

    next_actions = agent.actor_target.forward(next_states)
    next_q = agent.critic_target.forward(np.concatenate([next_states, next_actions], axis=1))
    y = scaled_r + cfg.discount * next_q

    sa = np.concatenate([states, actions], axis=1)
    q = agent.critic.forward(sa)
    err = y - q
    loss = float((err ** 2).mean())
    upstream = -2.0 * err / v          # d(mean err^2)/dQ with y held constant
    w_g, b_g, _ = agent.critic.backward(sa, upstream)
    agent.critic.sgd_step(w_g, b_g, cfg.critic_lr)

    policy_actions = agent.actor.forward(states)
    sa_pi = np.concatenate([states, policy_actions], axis=1)
    ones = np.full((v, 1), 1.0 / v, dtype=dt)
    _, _, input_grad = agent.critic.backward(sa_pi, ones)
    dq_da = input_grad[:, states.shape[1]:]
    w_g, b_g, _ = agent.actor.backward(states, dq_da)
    # negative step: the actor ascends the critic's value
    agent.actor.sgd_step(w_g, b_g, -cfg.actor_lr)
    return loss


def soft_update_params(primary: Mlp, target: Mlp, blend: float):
    for wt, wp in zip(target.weights, primary.weights):
        wt *= 1.0 - blend
        wt += blend * wp
    for bt, bp in zip(target.biases, primary.biases):
        bt *= 1.0 - blend
        bt += blend * bp


def soft_update(agent: DdpgAgent):
    """Blend both target networks toward their primaries."""
    soft_update_params(agent.actor, agent.actor_target, agent.cfg.target_blend)
    soft_update_params(agent.critic, agent.critic_target, agent.cfg.target_blend)


@dataclass
class TrainingSeries:
    """Per-episode reward trace of one training run."""

    episode_rewards: list[float] = field(default_factory=list)
    cumulative_average: list[float] = field(default_factory=list)

    def append(self, value: float):
        self.episode_rewards.append(value)
        n = len(self.episode_rewards)
        prev = self.cumulative_average[-1] if self.cumulative_average else 0.0
        self.cumulative_average.append(prev + (value - prev) / n)


def run_training(env, agent: DdpgAgent, cfg: AgentConfig,
                 step_hook=None) -> TrainingSeries:
    """Train the agent on an environment for the configured episode budget.

    ``env`` must offer ``reset(episode) -> state``, a ``problem`` attribute
    holding the current assignment instance, and
    ``step(assignment) -> (reward, next_state)``. Exploration noise shrinks
    linearly from ``ou_sigma`` to ``ou_sigma_final`` over the run.
    """
    series = TrainingSeries()
    total_steps = max(cfg.episodes * cfg.steps_per_episode - 1, 1)
    step_count = 0
    for episode in range(cfg.episodes):
        state = env.reset(episode)
        agent.noise.reset()
        ep_rewards = []
        for _t in range(cfg.steps_per_episode):
            frac = step_count / total_steps
            agent.noise.sigma = cfg.ou_sigma + frac * (cfg.ou_sigma_final - cfg.ou_sigma)
            action = agent.act(state)
            assignment = refine(action, env.problem, cfg.zero_threshold)
            r, next_state = env.step(assignment)
            agent.remember(state, action, r, next_state)
            agent.train_batch()
            soft_update(agent)
            if step_hook is not None:
                step_hook(episode, _t, r)
            state = next_state
            ep_rewards.append(r)
            step_count += 1
        series.append(float(np.mean(ep_rewards)) if ep_rewards else 0.0)
    return series


def save_checkpoint(agent: DdpgAgent, path):
    """Write all four networks to a JSON checkpoint (replay memory excluded)."""
    def dump(net: Mlp):
        return {
            "sizes": list(net.sizes),
            "output": net.output,
            "weights": [w.tolist() for w in net.weights],
            "biases": [b.tolist() for b in net.biases],
        }

    doc = {
        "version": CHECKPOINT_VERSION,
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "dtype": str(agent.actor.dtype),
        "actor": dump(agent.actor),
        "critic": dump(agent.critic),
        "actor_target": dump(agent.actor_target),
        "critic_target": dump(agent.critic_target),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path, cfg: AgentConfig) -> DdpgAgent:
    """Restore an agent whose policy outputs match the saved one bit for bit."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")

    def load(net: Mlp, blob):
        if list(net.sizes) != blob["sizes"] or net.output != blob["output"]:
            raise ValueError("checkpoint architecture does not match the config")
        net.weights = [np.array(w, dtype=doc["dtype"]) for w in blob["weights"]]
        net.biases = [np.array(b, dtype=doc["dtype"]) for b in blob["biases"]]

    cfg = replace(cfg, dtype=doc["dtype"])
    agent = DdpgAgent(doc["state_dim"], doc["action_dim"], cfg,
                      np.random.default_rng(0))
    load(agent.actor, doc["actor"])
    load(agent.critic, doc["critic"])
    load(agent.actor_target, doc["actor_target"])
    load(agent.critic_target, doc["critic_target"])
    return agent
