"""Learners sharing one global policy across all links.

``ProposedLearner`` stacks a DQN for subband selection on top of a
deterministic actor-critic for power; ``JointLearner`` is a single DQN over
(subband, power level) pairs.  Both follow centralized training with
experiences arriving one slot late and parameters broadcast every ``T_u``
slots with a ``T_d`` slot latency.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .env import Allocation
from .neural import Adam, Mlp, TargetSync


@dataclass
class AgentConfig:
    gamma: float = 0.5
    memory_size: int = 50_000
    batch_size: int = 128
    warmup: int = 256
    hidden: tuple = (256, 128, 64)
    lr_q: float = 1e-4
    lr_critic: float = 5e-4
    lr_actor: float = 2.5e-4
    lr_decay: float = 0.995
    lr_decay_every: int = 100
    eps_top: float = 0.25
    eps_top_decay: float = 0.9995
    eps_bottom: float = 0.6
    eps_bottom_decay: float = 0.999
    target_period: int = 100
    T_u: int = 50
    T_d: int = 2
    power_levels: int = 10
    level_span_db: float = 32.0
    clip_norm: float = 1.0

    def epsilon_top(self, t):
        return self.eps_top * self.eps_top_decay**t

    def epsilon_bottom(self, t):
        return self.eps_bottom * self.eps_bottom_decay**t

    def lr_scale(self, t):
        return self.lr_decay ** (t // self.lr_decay_every)


class ReplayMemory:
    """Fixed-capacity FIFO of (s, a, r, s_next); states stored as float32."""

    def __init__(self, capacity, state_dim):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim), dtype=np.float32)
        self.s_next = np.zeros((capacity, state_dim), dtype=np.float32)
        self.a = np.zeros(capacity)
        self.r = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def __len__(self):
        return self.size

    def push(self, s, a, r, s_next):
        """Append a batch of experiences (leading axis), evicting the oldest first."""
        s = np.atleast_2d(s)
        s_next = np.atleast_2d(s_next)
        a = np.atleast_1d(a)
        r = np.atleast_1d(r)
        if not np.all(np.isfinite(r)):
            raise ValueError("non-finite reward")
        k = s.shape[0]
        if k > self.capacity:
            s, a, r, s_next = s[-self.capacity :], a[-self.capacity :], r[-self.capacity :], s_next[-self.capacity :]
            k = self.capacity
        idx = (self._head + np.arange(k)) % self.capacity
        self.s[idx] = s
        self.s_next[idx] = s_next
        self.a[idx] = a
        self.r[idx] = r
        self._head = (self._head + k) % self.capacity
        self.size = min(self.size + k, self.capacity)

    def oldest_first(self):
        """Indices of stored experiences from oldest to newest."""
        start = self._head if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def sample(self, rng, batch_size):
        idx = rng.integers(self.size, size=batch_size)
        return (
            self.s[idx].astype(np.float64),
            self.a[idx].copy(),
            self.r[idx].copy(),
            self.s_next[idx].astype(np.float64),
        )


def select_subband(q_net, s, epsilon, rng):
    """Epsilon-greedy subband per agent; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    s = np.atleast_2d(s)
    q = q_net.forward(s)
    greedy = np.argmax(q, axis=1)
    explore = rng.random(s.shape[0]) < epsilon
    random_pick = rng.integers(q.shape[1], size=s.shape[0])
    return np.where(explore, random_pick, greedy)


def select_power(actor, s, epsilon, rng):
    """Epsilon-greedy power action in [0, 1]: actor output or a uniform draw."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    s = np.atleast_2d(s)
    mu = actor.forward(s)[:, 0]
    explore = rng.random(s.shape[0]) < epsilon
    random_pick = rng.random(s.shape[0])
    return np.clip(np.where(explore, random_pick, mu), 0.0, 1.0)


def dqn_target(r, s_next, q_target, gamma):
    q_next = q_target.forward(np.atleast_2d(s_next))
    return np.asarray(r, dtype=float) + gamma * q_next.max(axis=1)


def dqn_loss_and_grads(q_net, s, a, y):
    """Mean squared Bellman error on the taken actions and its parameter gradients."""
    q, trace = q_net.forward(s, cache=True)
    rows = np.arange(s.shape[0])
    a = a.astype(int)
    err = y - q[rows, a]
    grad_out = np.zeros_like(q)
    grad_out[rows, a] = -2.0 * err / s.shape[0]
    grads, _ = q_net.backward(trace, grad_out)
    return float(np.mean(err**2)), grads


def dqn_train_step(q_net, q_target, opt, batch, gamma, lr):
    s, a, r, s_next = batch
    y = dqn_target(r, s_next, q_target, gamma)
    loss, grads = dqn_loss_and_grads(q_net, s, a, y)
    opt.apply(q_net, grads, lr)
    return loss


def critic_input(s, a):
    return np.concatenate([s, np.reshape(a, (-1, 1))], axis=1)


def critic_target(r, s_next, actor, critic_tgt, gamma):
    mu_next = actor.forward(s_next)[:, 0]
    return np.asarray(r, dtype=float) + gamma * critic_tgt.forward(critic_input(s_next, mu_next))[:, 0]


def critic_loss_and_grads(critic, s, a, y):
    q, trace = critic.forward(critic_input(s, a), cache=True)
    err = y - q[:, 0]
    grads, _ = critic.backward(trace, (-2.0 * err / s.shape[0])[:, None])
    return float(np.mean(err**2)), grads


def ddpg_critic_step(critic, critic_tgt, actor, opt, batch, gamma, lr):
    s, a, r, s_next = batch
    y = critic_target(r, s_next, actor, critic_tgt, gamma)
    loss, grads = critic_loss_and_grads(critic, s, a, y)
    opt.apply(critic, grads, lr)
    return loss


def actor_objective_and_grads(actor, critic, s):
    """Mean critic value of the actor's actions and the gradient of its negation."""
    mu, a_trace = actor.forward(s, cache=True)
    q, c_trace = critic.forward(critic_input(s, mu[:, 0]), cache=True)
    B = s.shape[0]
    _, d_input = critic.backward(c_trace, np.full((B, 1), 1.0 / B))
    d_mu = d_input[:, -1:]
    grads, _ = actor.backward(a_trace, -d_mu)
    return float(q.mean()), grads


def ddpg_actor_step(actor, critic, opt, s, lr):
    objective, grads = actor_objective_and_grads(actor, critic, s)
    opt.apply(actor, grads, lr)
    return objective


def power_levels(p_max, n_levels=10, span_db=32.0):
    """Level 0 is silence; the rest are log-spaced from ``p_max - span_db`` to ``p_max``."""
    db = np.linspace(-span_db, 0.0, n_levels - 1)
    return np.concatenate([[0.0], p_max * 10.0 ** (db / 10.0)])


def decode_joint(idx, n_levels=10):
    """Row-major port index to (subband, level), both 0-based."""
    idx = np.asarray(idx)
    return idx // n_levels, idx % n_levels


def joint_dqn_action(q_net, s, epsilon, rng, n_levels=10):
    return decode_joint(select_subband(q_net, s, epsilon, rng), n_levels)


class BroadcastSchedule:
    """Parameter snapshots taken every ``T_u`` slots and released ``T_d`` slots later."""

    def __init__(self, T_u, T_d, initial):
        self.T_u = T_u
        self.T_d = T_d
        self.active = initial
        self.active_since = 0
        self.pending = []

    def maybe_snapshot(self, t, make_snapshot):
        if t > 0 and t % self.T_u == 0:
            self.pending.append((t + self.T_d, make_snapshot()))
            return True
        return False

    def acting_params(self, t):
        while self.pending and self.pending[0][0] <= t:
            self.active_since, self.active = self.pending.pop(0)
        return self.active


class ExperiencePipe:
    """Holds experiences until their arrival slot at the trainer."""

    def __init__(self):
        self.items = []

    def put(self, due, payload):
        self.items.append((due, payload))

    def pop_due(self, t):
        due = [p for d, p in self.items if d <= t]
        self.items = [(d, p) for d, p in self.items if d > t]
        return due

    def clear(self):
        self.items = []


class _Learner:
    """Shared plumbing: schedules, experience delay, broadcast, per-episode resets."""

    scheme = None

    def __init__(self, M, state_len, p_max, cfg, rng):
        self.M = M
        self.state_len = state_len
        self.p_max = p_max
        self.cfg = cfg
        self.rng = rng
        self.pipe = ExperiencePipe()
        self.train_steps = 0
        self.last_losses = {}

    def start_episode(self):
        self.pipe.clear()
        self.schedule = BroadcastSchedule(self.cfg.T_u, self.cfg.T_d, self.snapshot())

    def tick(self, t):
        """Slot-t trainer work: ingest arrived experiences, one step per policy, broadcast."""
        for payload in self.pipe.pop_due(t):
            self._ingest(payload)
        self.last_losses = {}
        if self._warm():
            self.last_losses = self._train(t)
            self.train_steps += 1
        self.schedule.maybe_snapshot(t, self.snapshot)

    def record(self, t, state, actions, rewards, next_state):
        """Experience completed by slot t's action; it reaches the trainer at t + 2."""
        self.pipe.put(t + 2, self._make_experience(state, actions, rewards, next_state))


class ProposedLearner(_Learner):
    scheme = "proposed"

    def __init__(self, M, state_len, p_max, cfg, rng):
        super().__init__(M, state_len, p_max, cfg, rng)
        h = list(cfg.hidden)
        self.q_net = Mlp.create([M * state_len] + h + [M], rng)
        self.actor = Mlp.create([state_len] + h + [1], rng, output_activation="sigmoid")
        self.critic = Mlp.create([state_len + 1] + h + [1], rng)
        self.q_sync = TargetSync(self.q_net, cfg.target_period)
        self.critic_sync = TargetSync(self.critic, cfg.target_period)
        self.opt_q = Adam(self.q_net, clip_norm=cfg.clip_norm)
        self.opt_critic = Adam(self.critic, clip_norm=cfg.clip_norm)
        self.opt_actor = Adam(self.actor, clip_norm=cfg.clip_norm)
        self.mem_subband = ReplayMemory(cfg.memory_size, M * state_len)
        self.mem_power = ReplayMemory(cfg.memory_size, state_len)
        self.start_episode()

    @property
    def output_size(self):
        return f"{self.M} + 1"

    def snapshot(self):
        return {"q_net": self.q_net.copy(), "actor": self.actor.copy()}

    def act(self, state, t, rng, explore=True):
        params = self.schedule.acting_params(t)
        eps_top = self.cfg.epsilon_top(t) if explore else 0.0
        eps_bottom = self.cfg.epsilon_bottom(t) if explore else 0.0
        sub = select_subband(params["q_net"], state.top, eps_top, rng)
        n = np.arange(sub.shape[0])
        a_pow = select_power(params["actor"], state.per_subband[n, sub], eps_bottom, rng)
        alloc = Allocation(sub, np.minimum(a_pow * self.p_max, self.p_max))
        return {"subband": sub, "power_action": a_pow, "alloc": alloc}

    def _make_experience(self, state, actions, rewards, next_state):
        n = np.arange(rewards.shape[0])
        sub = actions["subband"]
        return {
            "s_top": state.top.copy(),
            "s_top_next": next_state.top.copy(),
            "subband": sub.copy(),
            "s_pow": state.per_subband[n, sub].copy(),
            # next power state stays on the subband the action was taken on
            "s_pow_next": next_state.per_subband[n, sub].copy(),
            "power_action": actions["power_action"].copy(),
            "reward": rewards.copy(),
        }

    def _ingest(self, e):
        self.mem_subband.push(e["s_top"], e["subband"], e["reward"], e["s_top_next"])
        self.mem_power.push(e["s_pow"], e["power_action"], e["reward"], e["s_pow_next"])

    def _warm(self):
        need = max(self.cfg.warmup, self.cfg.batch_size)
        return len(self.mem_subband) >= need and len(self.mem_power) >= need

    def _train(self, t):
        cfg = self.cfg
        scale = cfg.lr_scale(t)
        batch = self.mem_subband.sample(self.rng, cfg.batch_size)
        loss_q = dqn_train_step(self.q_net, self.q_sync.target, self.opt_q, batch, cfg.gamma, cfg.lr_q * scale)
        batch = self.mem_power.sample(self.rng, cfg.batch_size)
        loss_c = ddpg_critic_step(
            self.critic, self.critic_sync.target, self.actor, self.opt_critic, batch, cfg.gamma, cfg.lr_critic * scale
        )
        ddpg_actor_step(self.actor, self.critic, self.opt_actor, batch[0], cfg.lr_actor * scale)
        self.q_sync.tick()
        self.critic_sync.tick()
        return {"loss_q": loss_q, "loss_critic": loss_c}

    def networks(self):
        return {
            "q_net": self.q_net,
            "q_target": self.q_sync.target,
            "actor": self.actor,
            "critic": self.critic,
            "critic_target": self.critic_sync.target,
        }

    def optimizers(self):
        return {"q_net": self.opt_q, "actor": self.opt_actor, "critic": self.opt_critic}

    def syncs(self):
        return {"q_net": self.q_sync, "critic": self.critic_sync}


class JointLearner(_Learner):
    scheme = "joint"

    def __init__(self, M, state_len, p_max, cfg, rng):
        super().__init__(M, state_len, p_max, cfg, rng)
        h = list(cfg.hidden)
        self.levels = power_levels(p_max, cfg.power_levels, cfg.level_span_db)
        self.q_net = Mlp.create([M * state_len] + h + [M * cfg.power_levels], rng)
        self.q_sync = TargetSync(self.q_net, cfg.target_period)
        self.opt_q = Adam(self.q_net, clip_norm=cfg.clip_norm)
        self.memory = ReplayMemory(cfg.memory_size, M * state_len)
        self.start_episode()

    @property
    def output_size(self):
        return str(self.M * self.cfg.power_levels)

    def snapshot(self):
        return {"q_net": self.q_net.copy()}

    def act(self, state, t, rng, explore=True):
        params = self.schedule.acting_params(t)
        eps = self.cfg.epsilon_top(t) if explore else 0.0
        port = select_subband(params["q_net"], state.top, eps, rng)
        sub, level = decode_joint(port, self.cfg.power_levels)
        alloc = Allocation(sub, self.levels[level])
        return {"subband": sub, "port": port, "alloc": alloc}

    def _make_experience(self, state, actions, rewards, next_state):
        return {
            "s_top": state.top.copy(),
            "s_top_next": next_state.top.copy(),
            "port": actions["port"].copy(),
            "reward": rewards.copy(),
        }

    def _ingest(self, e):
        self.memory.push(e["s_top"], e["port"], e["reward"], e["s_top_next"])

    def _warm(self):
        return len(self.memory) >= max(self.cfg.warmup, self.cfg.batch_size)

    def _train(self, t):
        cfg = self.cfg
        batch = self.memory.sample(self.rng, cfg.batch_size)
        loss_q = dqn_train_step(
            self.q_net, self.q_sync.target, self.opt_q, batch, cfg.gamma, cfg.lr_q * cfg.lr_scale(t)
        )
        self.q_sync.tick()
        return {"loss_q": loss_q}

    def networks(self):
        return {"q_net": self.q_net, "q_target": self.q_sync.target}

    def optimizers(self):
        return {"q_net": self.opt_q}

    def syncs(self):
        return {"q_net": self.q_sync}


LEARNERS = {"proposed": ProposedLearner, "joint": JointLearner}


def make_learner(scheme, M, state_len, p_max, cfg, rng):
    if scheme not in LEARNERS:
        raise ValueError(f"{scheme!r} is not a learning scheme")
    return LEARNERS[scheme](M, state_len, p_max, cfg, rng)


def save_checkpoint(learner, path, extra=None):
    """Networks, optimizer moments, target counters and metadata in one .npz file."""
    arrays = {}
    header = {
        "scheme": learner.scheme,
        "M": learner.M,
        "state_len": learner.state_len,
        "p_max": learner.p_max,
        "agent_config": asdict(learner.cfg),
        "train_steps": learner.train_steps,
        "networks": {},
        "optimizers": {},
        "target_steps": {k: s.steps for k, s in learner.syncs().items()},
        "extra": extra or {},
    }
    for name, net in learner.networks().items():
        header["networks"][name] = {"sizes": net.sizes, "activations": net.activations}
        for k, p in enumerate(net.params):
            arrays[f"net/{name}/{k}"] = p
    for name, opt in learner.optimizers().items():
        header["optimizers"][name] = opt.t
        for k, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"opt/{name}/m{k}"] = m
            arrays[f"opt/{name}/v{k}"] = v
    arrays["header"] = np.array(json.dumps(header))
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path, rng=None):
    with np.load(path) as data:
        header = json.loads(str(data["header"]))
        cfg_d = dict(header["agent_config"])
        cfg_d["hidden"] = tuple(cfg_d["hidden"])
        cfg = AgentConfig(**cfg_d)
        rng = rng if rng is not None else np.random.default_rng(0)
        learner = make_learner(header["scheme"], header["M"], header["state_len"], header["p_max"], cfg, rng)
        for name, net in learner.networks().items():
            for k, p in enumerate(net.params):
                p[...] = data[f"net/{name}/{k}"]
        for name, opt in learner.optimizers().items():
            opt.t = header["optimizers"][name]
            opt.m = [data[f"opt/{name}/m{k}"].copy() for k in range(len(opt.m))]
            opt.v = [data[f"opt/{name}/v{k}"].copy() for k in range(len(opt.v))]
        for name, sync in learner.syncs().items():
            sync.steps = header["target_steps"][name]
        learner.train_steps = header["train_steps"]
        learner.start_episode()
    return learner, header["extra"]
