"""Stage II: a deep Q-network that tunes per-modality fusion weights.

The agent sees the two coarse maps and the currently fused map (all at
56x56) and picks Increase / Decrease (move weight between the modalities
by ``delta``) or Terminate. Step actions earn +1 when the fused MSE drops
and -1 otherwise; Terminate earns +eta when the fused MSE is at most
``phi`` and -eta otherwise. Training uses experience replay and a target
network synced every ``sync_c`` updates.
"""
from __future__ import annotations

import csv
import enum
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from qfuse import checkpoint, optim
from qfuse import tensor as T
from qfuse.gan import batched_inference
from qfuse.nn import Dense, Module, copy_parameters
from qfuse.tensor import ContractError, DimensionError, Tensor, no_grad

log = logging.getLogger(__name__)


class Action(enum.IntEnum):
    INCREASE = 0
    DECREASE = 1
    TERMINATE = 2


N_ACTIONS = len(Action)
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class WeightVector:
    w: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in self.w)
        if any(v < -SIMPLEX_TOL or v > 1 + SIMPLEX_TOL for v in w) or abs(sum(w) - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights {w} are not on the simplex")
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, m=2):
        return cls((1.0 / m,) * m)

    @property
    def w1(self):
        return self.w[0]

    def __iter__(self):
        return iter(self.w)

    def __len__(self):
        return len(self.w)


def fuse_maps(maps, weights):
    """Pixelwise convex combination of the maps."""
    maps = [np.asarray(m) for m in maps]
    if len({m.shape for m in maps}) != 1:
        raise DimensionError(f"cannot fuse maps of shapes {[m.shape for m in maps]}")
    w = tuple(weights)
    if len(w) != len(maps):
        raise DimensionError(f"{len(maps)} maps but {len(w)} weights")
    out = w[0] * maps[0].astype(np.float64)
    for wi, m in zip(w[1:], maps[1:]):
        out = out + wi * m
    return np.clip(out, 0.0, 1.0)


def resize_map(image, size):
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if (h, w) == (size, size):
        return image
    return T.resize_matrix(h, size) @ image @ T.resize_matrix(w, size).T


@dataclass(frozen=True, eq=False)
class FusionState:
    """Coarse maps s1, s2 (already at state resolution) plus the current weights."""

    s1: np.ndarray
    s2: np.ndarray
    weights: WeightVector

    @property
    def s3(self):
        return fuse_maps([self.s1, self.s2], self.weights)

    def array(self, out=None):
        """The stacked [S, S, 3] observation, written into ``out`` when given."""
        if out is None:
            out = np.empty(self.s1.shape + (3,), dtype=np.float32)
        out[..., 0] = self.s1
        out[..., 1] = self.s2
        out[..., 2] = self.s3
        return out


def stack_states(states):
    """[B, S, S, 3] float32 batch of observations."""
    states = list(states)
    out = np.empty((len(states),) + states[0].s1.shape + (3,), dtype=np.float32)
    for i, s in enumerate(states):
        s.array(out[i])
    return out


def build_state(coarse_maps, weights, size=56):
    s1, s2 = (resize_map(m, size) for m in coarse_maps)
    return FusionState(s1, s2, weights)


def apply_action(weights, action, delta):
    """Move ``delta`` of weight onto (Increase) or off (Decrease) modality 1."""
    if len(weights) != 2:
        raise ContractError("weight actions are defined for two modalities")
    if not 0 < delta <= 0.5:
        raise ValueError(f"delta must be in (0, 0.5], got {delta}")
    w1 = weights.w1
    if action == Action.INCREASE:
        w1 = min(1.0, w1 + delta)
    elif action == Action.DECREASE:
        w1 = max(0.0, w1 - delta)
    else:
        return weights
    # keep the weights on the delta grid despite float drift
    w1 = round(w1, 12)
    return WeightVector((w1, 1.0 - w1))


def step_reward(mse_prev, mse_curr):
    return 1.0 if mse_curr - mse_prev < 0 else -1.0


def terminate_reward(mse, phi, eta):
    return eta if mse <= phi else -eta


# ---------------------------------------------------------------- networks


class QNetwork(Module):
    def __init__(self, state_size=56, hidden=256, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.arch = {"kind": "qnetwork", "state_size": state_size, "hidden": hidden, "seed": seed}
        self.state_size = state_size
        n_in = state_size * state_size * 3
        self.fc1 = Dense("fc1", n_in, hidden, rng, act="relu", dtype=dtype)
        self.fc2 = Dense("fc2", hidden, N_ACTIONS, rng, dtype=dtype)

    def forward(self, states):
        x = states if isinstance(states, Tensor) else Tensor(np.asarray(states, dtype=self.fc1.weight.dtype))
        return self.fc2(self.fc1(T.flatten(x)))

    def q_values(self, states):
        with no_grad():
            return self.forward(states).data


def save_qnet(q, directory):
    checkpoint.save(q, directory, q.arch)


def load_qnet(directory):
    arch = checkpoint.read_arch(directory)
    if arch.get("kind") != "qnetwork":
        raise ContractError(f"{directory} is not a Q-network checkpoint")
    q = QNetwork(arch["state_size"], arch["hidden"], arch["seed"])
    return checkpoint.load_into(q, directory)


def sync_target(q, target):
    copy_parameters(q, target)
    return target


# ---------------------------------------------------------------- replay


@dataclass(frozen=True, eq=False)
class Transition:
    state: FusionState
    action: Action
    reward: float
    next_state: FusionState
    terminal: bool


class ReplayMemory:
    """Bounded FIFO of transitions with uniform sampling."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def push(self, transition):
        self._items.append(transition)

    def sample(self, k, rng):
        idx = rng.choice(len(self._items), size=min(k, len(self._items)), replace=False)
        return [self._items[i] for i in idx]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


# ---------------------------------------------------------------- learning


def select_action(q, state, epsilon, rng):
    """Epsilon-greedy; ties in Q go to the lowest action index."""
    if rng.random() < epsilon:
        return Action(int(rng.integers(N_ACTIONS)))
    values = q.q_values(state.array()[None])[0]
    return Action(int(np.argmax(values)))


def compute_target(transition, target_net, gamma):
    if transition.terminal:
        return float(transition.reward)
    best = float(np.max(target_net.q_values(transition.next_state.array()[None])[0]))
    return float(transition.reward) + gamma * best


def compute_targets(batch, target_net, gamma):
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    live = np.array([not t.terminal for t in batch])
    y = rewards.copy()
    if live.any():
        nxt = stack_states(t.next_state for t, keep in zip(batch, live) if keep)
        y[live] += gamma * target_net.q_values(nxt).max(axis=1)
    return y


def dqn_update(q, batch, target_net, gamma, alpha):
    """One SGD step on the batch TD error; returns mean (y - Q(s, a))^2 before the step."""
    if not batch:
        raise ContractError("dqn_update needs a non-empty batch")
    y = compute_targets(batch, target_net, gamma)
    states = stack_states(t.state for t in batch)
    actions = [int(t.action) for t in batch]
    q_sa = T.gather_rows(q(states), actions)
    td = q_sa - Tensor(y.astype(q_sa.dtype))
    sq = T.mean(T.square(td))
    # half the squared error, so a single-sample step is exactly alpha * td * grad Q
    T.backward(sq * 0.5)
    optim.sgd_step(q.parameters(), alpha)
    return sq.item()


# ---------------------------------------------------------------- episodes


@dataclass
class AgentConfig:
    alpha: float = 1e-4
    gamma: float = 0.9
    eta: float = 2.0
    phi: float = 0.04
    delta: float = 0.1
    t_max: int = 20
    replay_capacity: int = 10_000
    batch_size: int = 32
    sync_c: int = 100
    learn_start: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    anneal_fraction: float = 0.5
    episodes: int = 300
    hidden: int = 256
    state_size: int = 56
    seed: int = 0


class DQNAgent:
    """Online and target Q-networks, replay memory, and the update counter."""

    def __init__(self, cfg: AgentConfig, q=None):
        self.cfg = cfg
        self.q = q or QNetwork(cfg.state_size, cfg.hidden, seed=cfg.seed)
        self.target = QNetwork(self.q.state_size, self.q.arch["hidden"], seed=cfg.seed)
        sync_target(self.q, self.target)
        self.memory = ReplayMemory(cfg.replay_capacity)
        self.rng = np.random.default_rng([cfg.seed, 7])
        self.updates = 0
        self.losses = []

    def learn(self):
        if len(self.memory) < max(self.cfg.learn_start, 1):
            return None
        batch = self.memory.sample(self.cfg.batch_size, self.rng)
        loss = dqn_update(self.q, batch, self.target, self.cfg.gamma, self.cfg.alpha)
        self.updates += 1
        self.losses.append(loss)
        if self.updates % self.cfg.sync_c == 0:
            sync_target(self.q, self.target)
        return loss


@dataclass
class EpisodeContext:
    """Per-sample inputs of an episode: coarse maps and the resized GT."""

    coarse: list
    s1: np.ndarray
    s2: np.ndarray
    gt: np.ndarray | None
    gt_state: np.ndarray | None


def prepare(sample, generators, state_size=56, coarse=None):
    if coarse is None:
        coarse = [batched_inference(g, [img])[0] for g, img in zip(generators, sample.images)]
    s1, s2 = (resize_map(m, state_size) for m in coarse)
    gt_state = None if sample.gt is None else resize_map(sample.gt, state_size)
    return EpisodeContext(coarse, s1, s2, sample.gt, gt_state)


def prepare_all(samples, generators, state_size=56):
    per_mod = [batched_inference(g, [s.images[m] for s in samples]) for m, g in enumerate(generators)]
    return [prepare(s, None, state_size, coarse=[pm[i] for pm in per_mod]) for i, s in enumerate(samples)]


@dataclass
class EpisodeRecord:
    weights: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    fused: np.ndarray | None = None
    final_mse: float | None = None

    @property
    def steps(self):
        return len(self.actions)

    @property
    def total_reward(self):
        return float(sum(self.rewards))

    @property
    def final_weights(self):
        return self.weights[-1]


def _state_mse(ctx, weights):
    return float(np.mean((fuse_maps([ctx.s1, ctx.s2], weights) - ctx.gt_state) ** 2))


def run_episode(ctx: EpisodeContext, agent: DQNAgent, mode="train", epsilon=0.0):
    """Roll out one weight-tuning episode; in train mode store transitions and learn."""
    cfg = agent.cfg
    train = mode == "train"
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if train and ctx.gt_state is None:
        raise ValueError("training episodes need ground truth")
    if not train:
        epsilon = 0.0
    weights = WeightVector.uniform(2)
    state = FusionState(ctx.s1, ctx.s2, weights)
    have_gt = ctx.gt_state is not None
    mse = _state_mse(ctx, weights) if have_gt else None
    rec = EpisodeRecord(weights=[weights])
    for t in range(cfg.t_max):
        action = select_action(agent.q, state, epsilon, agent.rng)
        if action == Action.TERMINATE:
            new_weights, new_mse = weights, mse
            reward = terminate_reward(mse, cfg.phi, cfg.eta) if have_gt else 0.0
            terminal = True
        else:
            new_weights = apply_action(weights, action, cfg.delta)
            new_mse = _state_mse(ctx, new_weights) if have_gt else None
            reward = step_reward(mse, new_mse) if have_gt else 0.0
            terminal = t == cfg.t_max - 1
        next_state = FusionState(ctx.s1, ctx.s2, new_weights)
        rec.actions.append(action)
        rec.rewards.append(reward)
        rec.weights.append(new_weights)
        if train:
            agent.memory.push(Transition(state, action, reward, next_state, terminal))
            agent.learn()
        state, weights, mse = next_state, new_weights, new_mse
        if terminal:
            break
    rec.fused = fuse_maps(ctx.coarse, weights)
    rec.final_mse = mse
    return rec


def epsilon_at(episode, cfg: AgentConfig):
    span = max(1.0, cfg.anneal_fraction * cfg.episodes)
    frac = min(1.0, episode / span)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


@dataclass
class FusionTrainingResult:
    agent: DQNAgent
    log: list  # rows: (episode, epsilon, steps, total_reward, final_mse, final_w1)


def train_fusion(contexts, cfg: AgentConfig, agent=None):
    """Episodes cycle through the training images, reshuffled every pass."""
    if not contexts:
        raise ValueError("stage-II training needs a non-empty dataset")
    agent = agent or DQNAgent(cfg)
    order_rng = np.random.default_rng([cfg.seed, 11])
    rows = []
    order = []
    for episode in range(cfg.episodes):
        if not order:
            order = list(order_rng.permutation(len(contexts)))
        ctx = contexts[order.pop(0)]
        eps = epsilon_at(episode, cfg)
        rec = run_episode(ctx, agent, "train", eps)
        rows.append((episode, eps, rec.steps, rec.total_reward, rec.final_mse, rec.final_weights.w1))
        if episode % 50 == 0:
            log.debug("episode %d eps=%.3f steps=%d reward=%.1f", episode, eps, rec.steps, rec.total_reward)
    return FusionTrainingResult(agent, rows)


def write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "epsilon", "steps", "total_reward", "final_mse", "final_w1"])
        for ep, eps, steps, reward, mse, w1 in rows:
            w.writerow([ep, repr(float(eps)), steps, repr(reward), repr(mse), repr(w1)])


def infer_weights(ctx: EpisodeContext, q, cfg: AgentConfig):
    """Greedy rollout until Terminate or ``t_max`` steps; returns (weights, fused map)."""
    agent = _GreedyView(q, cfg)
    rec = run_episode(ctx, agent, "eval")
    return rec.final_weights, rec.fused, rec


class _GreedyView:
    """Just enough of DQNAgent for evaluation rollouts (no memory, no updates)."""

    def __init__(self, q, cfg):
        self.q, self.cfg = q, cfg
        self.rng = np.random.default_rng(0)


def grid_optimum(ctx: EpisodeContext, delta=0.1):
    """w1 on the delta grid minimising fused state-resolution MSE, and the MSE curve."""
    grid = np.round(np.arange(0, 1 + delta / 2, delta), 12)
    curve = [_state_mse(ctx, WeightVector((w, 1 - w))) for w in grid]
    return float(grid[int(np.argmin(curve))]), list(zip(grid.tolist(), curve))
