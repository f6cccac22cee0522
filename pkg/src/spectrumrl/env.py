"""Slotted multi-cell downlink: SINR, capped rates, neighbourhoods and agent states.

Subband indices are 0-based in code (``0..M-1``); files written for humans
use 1-based subbands.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel
from .rng import substream

DB_FLOOR = -174.0
OWN_FEATURES = 5
INTERFERER_FEATURES = 4
INTERFERED_FEATURES = 5

# Column kinds, used by the normalizer.
POWER, RATE, RANK, GAIN, INTERF = range(5)


def state_length(c):
    return OWN_FEATURES + (INTERFERER_FEATURES + INTERFERED_FEATURES) * c


def column_kinds(c):
    kinds = [POWER, RATE, RANK, GAIN, INTERF]
    kinds += [GAIN, POWER, RATE, RANK] * c
    kinds += [GAIN, GAIN, RATE, RANK, INTERF] * c
    return np.array(kinds)


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(w):
    return 10.0 * math.log10(w) + 30.0


@dataclass
class Allocation:
    subband: np.ndarray  # (N,) int, 0-based
    power: np.ndarray  # (N,) watts

    def __post_init__(self):
        self.subband = np.asarray(self.subband, dtype=int)
        self.power = np.asarray(self.power, dtype=float)

    @property
    def N(self):
        return self.subband.shape[0]

    def onehot(self, M):
        a = np.zeros((self.N, M))
        a[np.arange(self.N), self.subband] = 1.0
        return a

    def tx_power(self, M):
        """``alpha[n, m] * p[n]`` as an (N, M) matrix."""
        return self.onehot(M) * self.power[:, None]

    def validate(self, M, p_max, N=None):
        if N is not None and (self.subband.shape != (N,) or self.power.shape != (N,)):
            raise ValueError(f"allocation must cover exactly {N} links")
        if np.any(self.subband < 0) or np.any(self.subband >= M):
            raise ValueError(f"subband index outside 0..{M - 1}: {self.subband}")
        if not np.all(np.isfinite(self.power)):
            raise ValueError("non-finite transmit power")
        if np.any(self.power < 0) or np.any(self.power > p_max * (1 + 1e-12)):
            raise ValueError(f"transmit power outside [0, {p_max}] W")


def off_diagonal(g):
    """Copy of ``g`` with the direct links ``g[n, n, :]`` zeroed."""
    out = g.copy()
    idx = np.arange(g.shape[0])
    out[idx, idx, :] = 0.0
    return out


def interference(g, tx_power):
    """Co-channel interference at each receiver: ``sum_{l != n} tx[l, m] g[l, n, m]``."""
    return np.einsum("lnm,lm->nm", off_diagonal(g), tx_power)


def compute_sinr(g, alloc, noise):
    M = g.shape[2]
    tx = alloc.tx_power(M)
    idx = np.arange(g.shape[0])
    direct = g[idx, idx, :] * tx
    return direct / (interference(g, tx) + noise)


def spectral_efficiency(gamma, cap_db=30.0):
    cap = 10.0 ** (cap_db / 10.0)
    return np.log2(1.0 + np.minimum(gamma, cap))


@dataclass
class SlotMetrics:
    sinr: np.ndarray
    rate: np.ndarray
    link_rate: np.ndarray
    sum_rate: float


def slot_metrics(g, alloc, noise, cap_db=30.0):
    sinr = compute_sinr(g, alloc, noise)
    rate = spectral_efficiency(sinr, cap_db)
    link_rate = rate.sum(axis=1)
    return SlotMetrics(sinr=sinr, rate=rate, link_rate=link_rate, sum_rate=float(link_rate.sum()))


def sum_rate(g, subband, power, noise, cap_db=30.0):
    return slot_metrics(g, Allocation(subband, power), noise, cap_db).sum_rate


@dataclass
class NeighborSets:
    interferers: np.ndarray  # (N, M, c) transmitter indices, -1 = empty
    interfered: np.ndarray  # (N, M, c) receiver indices, -1 = empty


def _top_c(flag, key, c):
    """Per row: indices ordered by (flag desc, key desc, index asc), self excluded.

    ``flag`` is -1 on the diagonal entry to exclude.
    """
    order = np.lexsort((-key, -flag), axis=-1)
    n_cand = flag.shape[-1] - 1
    keep = min(c, n_cand)
    out = np.full(flag.shape[:-1] + (c,), -1, dtype=int)
    out[..., :keep] = order[..., :keep]
    return out


def build_neighbor_sets(g_prev, alloc_prev, c, noise):
    N, _, M = g_prev.shape
    if c < 1:
        raise ValueError("c must be >= 1")
    alpha = alloc_prev.onehot(M)
    tx = alpha * alloc_prev.power[:, None]
    idx = np.arange(N)

    flag = np.broadcast_to(alpha.T[None, :, :], (N, M, N)).copy()  # [n, m, candidate]
    flag[idx, :, idx] = -1.0

    key_i = g_prev.transpose(1, 2, 0)  # [n, m, i] = g[i -> n, m]
    interferers = _top_c(flag, key_i, c)

    interf_prev = interference(g_prev, tx)  # [j, m]
    key_o = g_prev.transpose(0, 2, 1) / (interf_prev.T[None, :, :] + noise)  # [n, m, j]
    interfered = _top_c(flag, key_o, c)
    return NeighborSets(interferers=interferers, interfered=interfered)


def rank_subbands(g, interference_meas, noise):
    """Rank 1 = subband with the best direct gain to interference-plus-noise ratio."""
    idx = np.arange(g.shape[0])
    ratio = g[idx, idx, :] / (interference_meas + noise)
    order = np.argsort(-ratio, axis=1, kind="stable")
    z = np.empty_like(order)
    rows = np.arange(g.shape[0])[:, None]
    z[rows, order] = np.arange(1, g.shape[2] + 1)[None, :]
    return z


@dataclass
class Snapshot:
    """What the network remembers about one finished slot."""

    g: np.ndarray
    alloc: Allocation
    link_rate: np.ndarray  # (N,)
    rank: np.ndarray  # (N, M), ranks computed at the start of that slot
    interf: np.ndarray  # (N, M) interference each receiver saw during that slot


def build_features(g_now, prev, sets, rank_now, c):
    """Raw (un-normalized) per-subband features, shape (N, M, 5 + 9c), plus padding mask.

    Direct and interferer gains, the measured interference and the own rank
    come from the current slot; everything about the previous allocation and
    about interfered receivers comes from ``prev``.
    """
    N, _, M = g_now.shape
    n_idx = np.arange(N)
    tx_prev = prev.alloc.tx_power(M)
    interf_meas = interference(g_now, tx_prev)
    m_idx = np.arange(M)[None, :, None]
    nn = n_idx[:, None, None]

    I = sets.interferers
    O = sets.interfered
    I_ok = I >= 0
    O_ok = O >= 0
    Ic = np.where(I_ok, I, 0)
    Oc = np.where(O_ok, O, 0)

    own = np.stack(
        [
            tx_prev,
            np.broadcast_to(prev.link_rate[:, None], (N, M)),
            rank_now.astype(float),
            g_now[n_idx, n_idx, :],
            interf_meas,
        ],
        axis=-1,
    )
    interferer = np.stack(
        [
            g_now[Ic, nn, m_idx],
            tx_prev[Ic, m_idx],
            prev.link_rate[Ic],
            prev.rank[Ic, m_idx].astype(float),
        ],
        axis=-1,
    )
    interfered = np.stack(
        [
            prev.g[nn, Oc, m_idx],
            prev.g[Oc, Oc, m_idx],
            prev.link_rate[Oc],
            prev.rank[Oc, m_idx].astype(float),
            prev.interf[Oc, m_idx],
        ],
        axis=-1,
    )
    feats = np.concatenate(
        [own, interferer.reshape(N, M, -1), interfered.reshape(N, M, -1)], axis=-1
    )
    pad = np.concatenate(
        [
            np.zeros((N, M, OWN_FEATURES), dtype=bool),
            np.repeat(~I_ok, INTERFERER_FEATURES, axis=-1),
            np.repeat(~O_ok, INTERFERED_FEATURES, axis=-1),
        ],
        axis=-1,
    )
    return feats, pad, interf_meas


class FeatureNormalizer:
    """Maps raw features to roughly unit scale.

    Powers are divided by ``p_max``, rates by the capped maximum, ranks mapped
    to [0, 1].  Gains and interference powers go to dB (floored) and are
    standardized with running statistics that stop updating once frozen.
    """

    def __init__(self, c, M, p_max, cap_db=30.0):
        self.kinds = column_kinds(c)
        self.M = M
        self.p_max = p_max
        self.rate_scale = math.log2(1.0 + 10.0 ** (cap_db / 10.0))
        self.frozen = False
        # [count, mean, M2] for GAIN and INTERF
        self.stats = {GAIN: [0, 0.0, 0.0], INTERF: [0, 0.0, 0.0]}

    def _update(self, kind, values):
        if values.size == 0:
            return
        n_a, mean_a, m2_a = self.stats[kind]
        n_b = values.size
        mean_b = float(values.mean())
        m2_b = float(((values - mean_b) ** 2).sum())
        n = n_a + n_b
        delta = mean_b - mean_a
        self.stats[kind] = [n, mean_a + delta * n_b / n, m2_a + m2_b + delta * delta * n_a * n_b / n]

    def mean_std(self, kind):
        n, mean, m2 = self.stats[kind]
        std = math.sqrt(m2 / n) if n > 1 else 1.0
        return mean, max(std, 1e-6)

    def transform(self, feats, pad):
        out = np.empty_like(feats)
        k = self.kinds
        out[..., k == POWER] = feats[..., k == POWER] / self.p_max
        out[..., k == RATE] = feats[..., k == RATE] / self.rate_scale
        out[..., k == RANK] = (feats[..., k == RANK] - 1.0) / (self.M - 1) if self.M > 1 else 0.0
        for kind in (GAIN, INTERF):
            cols = k == kind
            db = 10.0 * np.log10(np.maximum(feats[..., cols], 10.0 ** (DB_FLOOR / 10.0)))
            if not self.frozen:
                self._update(kind, db[~pad[..., cols]])
            mean, std = self.mean_std(kind)
            out[..., cols] = (db - mean) / std
        out[pad] = 0.0
        return out

    def to_dict(self):
        return {"frozen": self.frozen, "stats": {str(k): v for k, v in self.stats.items()}}

    def load_dict(self, d):
        self.frozen = d["frozen"]
        self.stats = {int(k): list(v) for k, v in d["stats"].items()}


@dataclass
class AgentState:
    per_subband: np.ndarray  # (N, M, L)
    rank: np.ndarray  # (N, M), 1 = best

    @property
    def top(self):
        """Top-layer state: the M per-subband vectors concatenated, shape (N, M * L)."""
        N = self.per_subband.shape[0]
        return self.per_subband.reshape(N, -1)


def build_state(g_now, prev, sets, normalizer, noise, c):
    """States of all agents for the slot whose gains are ``g_now``."""
    if prev is None:
        raise RuntimeError("states need one finished slot of history")
    interf_meas = interference(g_now, prev.alloc.tx_power(g_now.shape[2]))
    rank_now = rank_subbands(g_now, interf_meas, noise)
    feats, pad, _ = build_features(g_now, prev, sets, rank_now, c)
    return AgentState(per_subband=normalizer.transform(feats, pad), rank=rank_now)


def externality(j, n, g, alloc, noise, cap_db=30.0):
    """Rate link ``j`` would gain on ``n``'s subband if ``n`` fell silent."""
    m = alloc.subband[n]
    if j == n or alloc.subband[j] != m:
        return 0.0
    p = alloc.power
    on = np.flatnonzero(alloc.subband == m)
    others = [l for l in on if l != j]
    interf_all = sum(g[l, j, m] * p[l] for l in others)
    interf_wo = sum(g[l, j, m] * p[l] for l in others if l != n)
    signal = g[j, j, m] * p[j]
    with_n = spectral_efficiency(signal / (interf_all + noise), cap_db)
    without_n = spectral_efficiency(signal / (interf_wo + noise), cap_db)
    return float(without_n - with_n)


def reward(n, g, alloc, sets_next, noise, cap_db=30.0):
    """Own rate on the chosen subband minus externalities to the interfered set."""
    m = alloc.subband[n]
    own = slot_metrics(g, alloc, noise, cap_db).rate[n, m]
    penalty = sum(
        externality(int(j), n, g, alloc, noise, cap_db) for j in sets_next.interfered[n, m] if j >= 0
    )
    return float(own - penalty)


def rewards_all(g, alloc, metrics, sets_next, noise, cap_db=30.0):
    """Vectorized rewards of every agent; matches :func:`reward` link by link."""
    N, _, M = g.shape
    n_idx = np.arange(N)
    a = alloc.subband
    p = alloc.power
    tx = alloc.tx_power(M)
    interf = interference(g, tx)  # [j, m]
    O = sets_next.interfered[n_idx, a, :]  # (N, c)
    ok = O >= 0
    Oc = np.where(ok, O, 0)
    am = a[:, None]
    same = ok & (a[Oc] == am)
    signal = g[Oc, Oc, am] * p[Oc]
    i_all = interf[Oc, am]
    i_wo = np.maximum(i_all - g[n_idx[:, None], Oc, am] * p[:, None], 0.0)
    pi = spectral_efficiency(signal / (i_wo + noise), cap_db) - spectral_efficiency(
        signal / (i_all + noise), cap_db
    )
    pi = np.where(same, np.maximum(pi, 0.0), 0.0)
    own = metrics.rate[n_idx, a]
    return own - pi.sum(axis=1), pi


@dataclass
class EnvParams:
    K: int = 5
    N: int = 20
    M: int = 4
    cell_radius: float = 400.0
    shadow_std_db: float = 10.0
    f_d: float = 10.0
    T: float = 0.02
    p_max: float = dbm_to_watts(38.0)
    noise: float = dbm_to_watts(-114.0)
    cap_db: float = 30.0
    c: int = 5


@dataclass
class StepResult:
    metrics: SlotMetrics
    rewards: np.ndarray
    state: AgentState
    externalities: np.ndarray = field(repr=False, default=None)


class CellularEnv:
    """One deployment evolving slot by slot.

    Call :meth:`step` with slot 0's allocation first; from then on
    :attr:`state` holds the agents' observation for the current slot, built
    only from current local measurements and one-slot-delayed neighbour
    reports.
    """

    def __init__(self, params, seed, episode=0, normalizer=None):
        self.params = params
        self.seed = seed
        self.episode = episode
        pr = params
        self.normalizer = normalizer or FeatureNormalizer(pr.c, pr.M, pr.p_max, pr.cap_db)
        dep_seed = substream(seed, "deployment-seed", episode).integers(2**63)
        self.deployment = channel.generate_deployment(pr.K, pr.N, pr.cell_radius, dep_seed)
        self.beta = channel.sample_large_scale(self.deployment, pr.shadow_std_db, dep_seed)
        self.rho = channel.jakes_rho(pr.f_d, pr.T)
        self.channel = channel.ChannelProcess(self.deployment, self.beta, pr.M, self.rho, dep_seed)
        self.slot = 0
        self.prev = None
        self.sets = None
        self.state = None
        self._rank_now = self._initial_rank()

    @property
    def g(self):
        return self.channel.g

    def _initial_rank(self):
        pr = self.params
        return rank_subbands(self.g, np.zeros((pr.N, pr.M)), pr.noise)

    def random_allocation(self, rng):
        pr = self.params
        return Allocation(rng.integers(pr.M, size=pr.N), rng.uniform(0.0, pr.p_max, size=pr.N))

    def metrics(self, alloc):
        return slot_metrics(self.g, alloc, self.params.noise, self.params.cap_db)

    def step(self, alloc):
        pr = self.params
        alloc.validate(pr.M, pr.p_max, pr.N)
        g = self.g
        metrics = slot_metrics(g, alloc, pr.noise, pr.cap_db)
        sets_next = build_neighbor_sets(g, alloc, pr.c, pr.noise)
        rewards, pi = rewards_all(g, alloc, metrics, sets_next, pr.noise, pr.cap_db)
        self.prev = Snapshot(
            g=g,
            alloc=alloc,
            link_rate=metrics.link_rate,
            rank=self._rank_now,
            interf=interference(g, alloc.tx_power(pr.M)),
        )
        self.sets = sets_next
        self.channel.advance()
        self.slot += 1
        self.state = build_state(self.g, self.prev, sets_next, self.normalizer, pr.noise, pr.c)
        self._rank_now = self.state.rank
        return StepResult(metrics=metrics, rewards=rewards, state=self.state, externalities=pi)
