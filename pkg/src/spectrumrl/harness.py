"""Experiment orchestration: training episodes, test runs and result tables."""

import csv
import dataclasses
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import agents
from .agents import AgentConfig, make_learner
from .baselines import fp_solve, random_alloc
from .env import CellularEnv, EnvParams, FeatureNormalizer, dbm_to_watts, state_length, watts_to_dbm
from .rng import substream

log = logging.getLogger(__name__)

SCHEMES = ("proposed", "joint", "ideal_fp", "delayed_fp", "random")
LEARNING_SCHEMES = ("proposed", "joint")
CONFIG_VERSION = 1
TEST_DEPLOYMENT_BASE = 100_000
TRAINING_CURVE_FILE = "training_curve.csv"
CHECKPOINT_FILE = "checkpoint.npz"
TEST_TABLE_FILE = "test_table.csv"
METRICS_DUMP_FILE = "metrics_dump.csv"
TABLE_COLUMNS = ["K", "N", "M", "scheme", "sum_rate_per_link", "q_output_size", "fp_mean_iterations"]
CURVE_COLUMNS = [
    "slot",
    "reward_ma",
    "loss_q",
    "loss_critic",
    "epsilon_top",
    "epsilon_bottom",
    "sum_rate_ma",
]


@dataclass
class ExperimentConfig:
    K: int = 5
    N: int = 20
    M: int = 4
    cell_radius_m: float = 400.0
    shadow_std_db: float = 10.0
    f_d_hz: float = 10.0
    slot_T_s: float = 0.02
    P_max_dbm: float = 38.0
    noise_dbm: float = -114.0
    sinr_cap_db: float = 30.0
    c: int = 5
    episodes: int = 4
    slots_per_episode: int = 5000
    seeds: list = field(default_factory=lambda: [0])
    scheme: str = "proposed"
    test_deployments: int = 5
    test_slots: int = 2000
    test_warmup: int = 100
    ma_window: int = 250
    fp_max_iter: int = 500
    fp_tol: float = 1e-3
    fp_reassign: bool = False
    fp_cap_aware: bool = False
    fp_restarts: int = 0
    agent: AgentConfig = field(default_factory=AgentConfig)
    config_version: int = CONFIG_VERSION

    def __post_init__(self):
        if isinstance(self.agent, dict):
            d = dict(self.agent)
            if "hidden" in d:
                d["hidden"] = tuple(d["hidden"])
            self.agent = AgentConfig(**d)
        self.validate()
        # dBm inputs become watts here, once
        self.p_max_w = dbm_to_watts(self.P_max_dbm)
        self.noise_w = dbm_to_watts(self.noise_dbm)

    def validate(self):
        for name in ("K", "N", "M", "c", "episodes", "slots_per_episode", "test_deployments", "test_slots"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("cell_radius_m", "f_d_hz", "slot_T_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.N % self.K:
            raise ValueError("N must be divisible by K")

    def env_params(self):
        return EnvParams(
            K=self.K,
            N=self.N,
            M=self.M,
            cell_radius=self.cell_radius_m,
            shadow_std_db=self.shadow_std_db,
            f_d=self.f_d_hz,
            T=self.slot_T_s,
            p_max=self.p_max_w,
            noise=self.noise_w,
            cap_db=self.sinr_cap_db,
            c=self.c,
        )

    def replace(self, **changes):
        d = self.to_dict()
        agent_changes = changes.pop("agent", {})
        d.update(changes)
        d["agent"].update(agent_changes)
        return ExperimentConfig(**d)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["agent"] = dataclasses.asdict(self.agent)
        d["agent"]["hidden"] = list(self.agent.hidden)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config_version {version}")
        agent_d = {k: d.pop(k) for k in list(d) if k in AgentConfig.__dataclass_fields__}
        agent_d.update(d.pop("agent", {}))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(agent=agent_d, **d)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path):
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2))


@dataclass
class RunRecord:
    scheme: str
    K: int
    N: int
    M: int
    sum_rate_per_link: list = field(default_factory=list)
    mean_reward: list = field(default_factory=list)
    loss_q: list = field(default_factory=list)
    loss_critic: list = field(default_factory=list)
    epsilon_top: list = field(default_factory=list)
    epsilon_bottom: list = field(default_factory=list)
    test_score: float = None
    q_output_size: str = ""
    fp_iterations: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    @property
    def fp_mean_iterations(self):
        return float(np.mean(self.fp_iterations)) if self.fp_iterations else None

    def table_row(self):
        it = self.fp_mean_iterations
        return {
            "K": self.K,
            "N": self.N,
            "M": self.M,
            "scheme": self.scheme,
            "sum_rate_per_link": f"{self.test_score:.4f}",
            "q_output_size": self.q_output_size,
            "fp_mean_iterations": "" if it is None else f"{it:.2f}",
        }

    def summary(self):
        return {
            "scheme": self.scheme,
            "K": self.K,
            "N": self.N,
            "M": self.M,
            "test_score": self.test_score,
            "q_output_size": self.q_output_size,
            "fp_mean_iterations": self.fp_mean_iterations,
            "wall_clock_s": self.wall_clock_s,
        }


def q_output_size(scheme, M, power_levels=10):
    if scheme == "proposed":
        return f"{M} + 1"
    if scheme == "joint":
        return str(M * power_levels)
    return ""


def atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def _csv_text(header, rows):
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def moving_average(x, window):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x
    c = np.cumsum(np.insert(x, 0, 0.0))
    out = np.empty_like(x)
    for i in range(x.size):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def write_training_curve(record, path, window=250):
    reward_ma = moving_average(record.mean_reward, window)
    rate_ma = moving_average(record.sum_rate_per_link, window)
    rows = [
        [
            t,
            _fmt(reward_ma[t]),
            _fmt(record.loss_q[t]),
            _fmt(record.loss_critic[t]),
            _fmt(record.epsilon_top[t]),
            _fmt(record.epsilon_bottom[t]),
            _fmt(rate_ma[t]),
        ]
        for t in range(len(record.mean_reward))
    ]
    atomic_write_text(path, _csv_text(CURVE_COLUMNS, rows))


def run_training(cfg, seed=None, out_dir=None, scheme=None):
    """Train a shared policy over ``cfg.episodes`` fresh deployments.

    Returns ``(record, learner, normalizer)``.  Every episode starts with one
    random bootstrap slot; exploration and learning-rate schedules restart
    per episode.  Feature statistics freeze after the first episode.
    """
    scheme = scheme or cfg.scheme
    if scheme not in LEARNING_SCHEMES:
        raise ValueError(f"training needs a learning scheme, got {scheme!r}")
    seed = cfg.seeds[0] if seed is None else seed
    params = cfg.env_params()
    acfg = cfg.agent
    L = state_length(cfg.c)
    learner = make_learner(scheme, cfg.M, L, params.p_max, acfg, substream(seed, "trainer", _scheme_id(scheme)))
    normalizer = FeatureNormalizer(cfg.c, cfg.M, params.p_max, cfg.sinr_cap_db)
    record = RunRecord(scheme, cfg.K, cfg.N, cfg.M, q_output_size=q_output_size(scheme, cfg.M, acfg.power_levels))
    start = time.perf_counter()
    for ep in range(cfg.episodes):
        env = CellularEnv(params, seed, episode=ep, normalizer=normalizer)
        act_rng = substream(seed, "exploration", _scheme_id(scheme), ep)
        learner.start_episode()
        res = env.step(env.random_allocation(act_rng))
        _log_slot(record, res, {}, acfg.epsilon_top(0), acfg.epsilon_bottom(0) if scheme == "proposed" else None)
        state = res.state
        for t in range(1, cfg.slots_per_episode):
            learner.tick(t)
            actions = learner.act(state, t, act_rng)
            res = env.step(actions["alloc"])
            learner.record(t, state, actions, res.rewards, res.state)
            _log_slot(
                record,
                res,
                learner.last_losses,
                acfg.epsilon_top(t),
                acfg.epsilon_bottom(t) if scheme == "proposed" else None,
            )
            state = res.state
        normalizer.frozen = True
        log.info(
            "%s episode %d: last-%d sum-rate/link %.3f",
            scheme,
            ep,
            cfg.ma_window,
            float(np.mean(record.sum_rate_per_link[-cfg.ma_window :])),
        )
    record.wall_clock_s = time.perf_counter() - start
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_training_curve(record, os.path.join(out_dir, TRAINING_CURVE_FILE), cfg.ma_window)
        agents.save_checkpoint(
            learner,
            os.path.join(out_dir, CHECKPOINT_FILE),
            extra={"normalizer": normalizer.to_dict(), "config": cfg.to_dict(), "seed": seed},
        )
    return record, learner, normalizer


def _scheme_id(scheme):
    return SCHEMES.index(scheme)


def _log_slot(record, res, losses, eps_top, eps_bottom):
    record.sum_rate_per_link.append(res.metrics.sum_rate / res.rewards.shape[0])
    record.mean_reward.append(float(np.mean(res.rewards)))
    record.loss_q.append(losses.get("loss_q"))
    record.loss_critic.append(losses.get("loss_critic"))
    record.epsilon_top.append(eps_top)
    record.epsilon_bottom.append(eps_bottom)


def load_trained(path):
    learner, extra = agents.load_checkpoint(path)
    norm = FeatureNormalizer(learner_c(learner), learner.M, learner.p_max)
    norm.load_dict(extra["normalizer"])
    norm.frozen = True
    return learner, norm


def learner_c(learner):
    return (learner.state_len - 5) // 9


def run_test(cfg, schemes=None, seed=None, learners=None, dump_path=None):
    """Evaluate schemes with pure exploitation on fresh test deployments.

    All schemes see the same deployments and the same fading sequences.
    ``learners`` maps a learning scheme to ``(learner, normalizer)``.
    Returns ``{scheme: RunRecord}`` with ``test_score`` the mean sum-rate per
    link over the scored slots.
    """
    schemes = list(schemes or [cfg.scheme])
    learners = learners or {}
    for s in schemes:
        if s not in SCHEMES:
            raise ValueError(f"unknown scheme {s!r}")
        if s in LEARNING_SCHEMES and s not in learners:
            raise FileNotFoundError(f"no trained checkpoint for {s!r}")
    seed = cfg.seeds[0] if seed is None else seed
    params = cfg.env_params()
    records = {
        s: RunRecord(s, cfg.K, cfg.N, cfg.M, q_output_size=q_output_size(s, cfg.M, cfg.agent.power_levels))
        for s in schemes
    }
    scores = {s: [] for s in schemes}
    need_fp = any(s in ("ideal_fp", "delayed_fp") for s in schemes)
    fp_kw = dict(
        max_iter=cfg.fp_max_iter,
        tol=cfg.fp_tol,
        cap_db=cfg.sinr_cap_db,
        reassign=cfg.fp_reassign,
        cap_aware=cfg.fp_cap_aware,
        restarts=cfg.fp_restarts,
    )
    dump_rows = []
    start = time.perf_counter()
    for d in range(cfg.test_deployments):
        episode = TEST_DEPLOYMENT_BASE + d
        envs, rngs, states = {}, {}, {}
        for s in schemes:
            norm = learners[s][1] if s in learners else None
            envs[s] = CellularEnv(params, seed, episode=episode, normalizer=norm)
            rngs[s] = substream(seed, "test-actions", _scheme_id(s), d)
            if s in learners:
                learners[s][0].start_episode()
        prev_fp = None
        for t in range(cfg.test_warmup + cfg.test_slots):
            g = envs[schemes[0]].g
            fp_now = None
            if need_fp:
                fp_now, fp_state = fp_solve(g, params.noise, params.p_max, **fp_kw)
            for s in schemes:
                env = envs[s]
                if t == 0 and s in ("proposed", "joint", "delayed_fp"):
                    alloc = env.random_allocation(rngs[s])
                elif s in LEARNING_SCHEMES:
                    alloc = learners[s][0].act(states[s], t, rngs[s], explore=False)["alloc"]
                elif s == "ideal_fp":
                    alloc = fp_now
                elif s == "delayed_fp":
                    alloc = prev_fp
                else:
                    alloc = random_alloc(rngs[s], params.N, params.M, params.p_max)
                res = env.step(alloc)
                states[s] = res.state
                if t >= cfg.test_warmup:
                    scores[s].append(res.metrics.sum_rate / params.N)
                    if s in ("ideal_fp", "delayed_fp"):
                        records[s].fp_iterations.append(fp_state.iterations)
                    if dump_path is not None:
                        dump_rows += _dump_rows(s, d, t, alloc, res)
            prev_fp = fp_now
    elapsed = time.perf_counter() - start
    for s in schemes:
        records[s].sum_rate_per_link = scores[s]
        records[s].test_score = float(np.mean(scores[s]))
        records[s].wall_clock_s = elapsed
    if dump_path is not None:
        write_metrics_dump(dump_rows, dump_path)
    return records


DUMP_COLUMNS = ["scheme", "deployment", "slot", "link", "subband", "power_dBm", "sinr_dB", "rate", "reward"]


def _dump_rows(scheme, d, t, alloc, res):
    rows = []
    for n in range(alloc.N):
        m = int(alloc.subband[n])
        p = float(alloc.power[n])
        sinr = float(res.metrics.sinr[n, m])
        rows.append(
            [
                scheme,
                d,
                t,
                n,
                m + 1,
                f"{watts_to_dbm(p):.4f}" if p > 0 else "-inf",
                f"{10 * np.log10(sinr):.4f}" if sinr > 0 else "-inf",
                f"{res.metrics.rate[n, m]:.6f}",
                f"{res.rewards[n]:.6f}",
            ]
        )
    return rows


def write_metrics_dump(rows, path):
    atomic_write_text(path, _csv_text(DUMP_COLUMNS, rows))


def emit_table(records, path):
    """Summary CSV: one row per (K, N, M, scheme)."""
    rows = [[r.table_row()[c] for c in TABLE_COLUMNS] for r in records]
    atomic_write_text(path, _csv_text(TABLE_COLUMNS, rows))


def read_table(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def save_record(record, path):
    atomic_write_text(path, json.dumps(record.summary(), indent=2))


def load_record(path):
    with open(path) as f:
        d = json.load(f)
    rec = RunRecord(d["scheme"], d["K"], d["N"], d["M"], test_score=d["test_score"], q_output_size=d["q_output_size"])
    if d.get("fp_mean_iterations") is not None:
        rec.fp_iterations = [d["fp_mean_iterations"]]
    rec.wall_clock_s = d.get("wall_clock_s", 0.0)
    return rec
