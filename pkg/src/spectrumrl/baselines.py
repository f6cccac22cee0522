"""Benchmarks: fractional programming (ideal and one-slot-delayed) and random allocation."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .env import Allocation, slot_metrics
from .rng import substream


@dataclass
class FpState:
    p: np.ndarray
    subband: np.ndarray
    y: np.ndarray
    gamma_aux: np.ndarray
    objective: float
    iterations: int
    history: list = field(default_factory=list)


def _coupling(g, subband):
    """``G[l, n] = g[l, n, subband[n]]`` when l and n share a subband, else 0."""
    N = g.shape[0]
    idx = np.arange(N)
    G = g[idx[:, None], idx[None, :], subband[None, :]]
    return G * (subband[:, None] == subband[None, :])


def fp_power_update(g, subband, p, noise, p_max):
    """One closed-form quadratic-transform pass for unweighted sum-rate at fixed subbands.

    Returns ``(p_new, y, gamma)``: the updated powers, the quadratic-transform
    variables and the auxiliary SINRs evaluated at ``p``.
    """
    G = _coupling(g, subband)
    direct = np.diag(G)
    rx_total = G.T @ p  # sum_l G[l, n] p_l
    signal = direct * p
    gamma = signal / (rx_total - signal + noise)
    y = np.sqrt((1.0 + gamma) * signal) / (rx_total + noise)
    denom = G @ (y * y)  # sum_j G[n, j] y_j^2
    with np.errstate(divide="ignore", invalid="ignore"):
        p_new = (1.0 + gamma) * y * y * direct / (denom * denom)
    p_new = np.where(denom > 0, p_new, 0.0)
    return np.clip(p_new, 0.0, p_max), y, gamma


def trim_to_cap(g, subband, p, noise, cap_db, passes=3):
    """Scale down links whose SINR exceeds the cap until it just reaches the cap.

    A trimmed link keeps its capped rate while every other link sees less
    interference, so the capped sum-rate never decreases.
    """
    gamma_max = 10.0 ** (cap_db / 10.0)
    G = _coupling(g, subband)
    direct = np.diag(G)
    p = p.copy()
    for _ in range(passes):
        signal = direct * p
        gamma = signal / (G.T @ p - signal + noise)
        over = gamma > gamma_max
        if not np.any(over):
            break
        p[over] *= gamma_max / gamma[over]
    return p


def _objective(g, subband, p, noise, cap_db):
    return slot_metrics(g, Allocation(subband, p), noise, cap_db).sum_rate


def _single_link_moves(g, subband, p, noise, cap_db, p_max):
    """Capped sum-rate of every single-link change of (subband, power).

    Candidate powers are 0, the current power and ``p_max`` on each subband.
    Returns ``(values, n, m, q)`` with one entry per candidate.
    """
    N, _, M = g.shape
    idx = np.arange(N)
    tx = np.zeros((N, M))
    tx[idx, subband] = p
    received = np.einsum("klm,km->lm", g, tx)  # includes each link's own signal
    own = g[idx, idx, subband] * p
    interf = received[idx, subband] - own
    n = np.repeat(idx, 3 * M)
    m = np.tile(np.repeat(np.arange(M), 3), N)
    q = np.stack([np.zeros(N), p, np.full(N, float(p_max))], axis=1)[n, np.tile(np.arange(3), N * M)]
    # other links: remove n's old contribution, add its new one
    interf_c = (
        interf[None, :]
        - g[n, :, subband[n]] * p[n, None] * (subband[None, :] == subband[n, None])
        + g[n, :, m] * q[:, None] * (subband[None, :] == m[:, None])
    )
    signal_c = np.tile(own, (n.size, 1))
    rows = np.arange(n.size)
    signal_c[rows, n] = g[n, n, m] * q
    interf_c[rows, n] = received[n, m] - (subband[n] == m) * g[n, n, m] * p[n]
    gamma = signal_c / (np.maximum(interf_c, 0.0) + noise)
    vals = np.log2(1.0 + np.minimum(gamma, 10.0 ** (cap_db / 10.0))).sum(axis=1)
    return vals, n, m, q


def _pair_candidates(subband, p, M, p_max):
    """(subband, power) vectors reached by two-link exchanges.

    Covers swapping two links' subbands, swapping two subband labels, and
    handing the channel from one link to another (one silenced, the other at
    ``p_max``).
    """
    N = subband.shape[0]
    out = []
    for a in range(N):
        for b in range(a + 1, N):
            if subband[a] != subband[b]:
                c = subband.copy()
                c[a], c[b] = subband[b], subband[a]
                out.append((c, p))
            for on, off in ((a, b), (b, a)):
                q = p.copy()
                q[on], q[off] = p_max, 0.0
                out.append((subband, q))
    for a in range(M):
        for b in range(a + 1, M):
            c = subband.copy()
            c[subband == a], c[subband == b] = b, a
            out.append((c, p))
    return out


def _escape_moves(g, subband, p, noise, cap_db, p_max, obj):
    """Greedy guarded moves out of local optima of the smooth power update.

    First the best single-link change of (subband, power in {0, p, p_max})
    is applied while it helps: this leaves on/off traps such as two strongly
    coupled links both at full power, a silenced link that should return on
    another subband, or a lone link creeping towards ``p_max``.  When no
    single-link move helps, two-link exchanges are tried.  Every accepted move strictly raises the capped
    sum-rate.
    """
    subband, p = subband.copy(), p.copy()
    M = g.shape[2]
    for _ in range(4 * p.shape[0]):
        vals, n, m, q = _single_link_moves(g, subband, p, noise, cap_db, p_max)
        best = int(np.argmax(vals))
        if vals[best] > obj * (1.0 + 1e-12):
            trial_sub, trial_p = subband.copy(), p.copy()
            trial_sub[n[best]], trial_p[n[best]] = m[best], q[best]
            val = _objective(g, trial_sub, trial_p, noise, cap_db)
            if val > obj:
                subband, p, obj = trial_sub, trial_p, val
                continue
        best_val, best = obj, None
        for cand_sub, cand_p in _pair_candidates(subband, p, M, p_max):
            val = _objective(g, cand_sub, cand_p, noise, cap_db)
            if val > best_val * (1.0 + 1e-12):
                best_val, best = val, (cand_sub, cand_p)
        if best is None:
            break
        (subband, p), obj = best, best_val
    return subband, p, obj


def _best_response(g, subband, p, noise, cap_db, obj):
    """Gauss-Seidel sweep moving each link to its own best subband if the sum-rate allows."""
    N, _, M = g.shape
    subband = subband.copy()
    for n in range(N):
        tx = np.zeros((N, M))
        tx[np.arange(N), subband] = p
        tx[n] = 0.0
        interf = np.einsum("lm,lm->m", g[:, n, :], tx)
        own = g[n, n, :] * p[n] / (interf + noise)
        best = int(np.argmax(own))
        if own[best] <= own[subband[n]]:
            continue
        trial = subband.copy()
        trial[n] = best
        val = _objective(g, trial, p, noise, cap_db)
        if val >= obj:
            subband, obj = trial, val
    return subband, obj


def _fp_run(g, noise, p_max, subband, p, max_iter, tol, cap_db, reassign, cap_aware):
    """One monotone FP run from the given start; returns an ``FpState``."""
    N = g.shape[0]
    obj = _objective(g, subband, p, noise, cap_db)
    history = [obj]
    y = gamma = np.zeros(N)
    it = 0
    for it in range(1, max_iter + 1):
        prev = obj
        p_try, y, gamma = fp_power_update(g, subband, p, noise, p_max)
        if not np.all(np.isfinite(p_try)):
            raise FloatingPointError(f"non-finite FP power at iteration {it}")
        val = _objective(g, subband, p_try, noise, cap_db)
        if val >= obj:
            p, obj = p_try, val
        if cap_aware:
            p_trim = trim_to_cap(g, subband, p, noise, cap_db)
            val = _objective(g, subband, p_trim, noise, cap_db)
            if val >= obj:
                p, obj = p_trim, val
        if reassign:
            if g.shape[2] > 1:
                subband, obj = _best_response(g, subband, p, noise, cap_db, obj)
            subband, p, obj = _escape_moves(g, subband, p, noise, cap_db, p_max, obj)
        if not np.isfinite(obj):
            raise FloatingPointError(f"non-finite FP objective at iteration {it}")
        history.append(obj)
        if abs(obj - prev) <= tol * max(abs(prev), 1e-12):
            break
    return FpState(p=p, subband=subband, y=y, gamma_aux=gamma, objective=obj, iterations=it, history=history)


def fp_solve(
    g, noise, p_max, max_iter=500, tol=1e-3, cap_db=30.0, reassign=True, cap_aware=True, restarts=0, seed=0
):
    """Alternate FP power updates and guarded best-response subband moves.

    The closed-form update targets the uncapped rate; with ``cap_aware`` each
    iteration also trims links above the SINR cap back to it.  With
    ``reassign`` the discrete decisions are revisited too: links move to
    their best subband, and greedy single- and two-link exchanges escape
    on/off traps.  With ``reassign=False`` the subbands stay at their initial
    choice.  Plain power-control FP is ``reassign=False, cap_aware=False``.

    The first run starts at full power with every link on its strongest
    direct-gain subband.  A step is kept only if the capped sum-rate does not
    drop, so ``state.history`` is non-decreasing; a run stops when the
    relative change of one full iteration falls below ``tol``.  ``restarts``
    extra runs start from random subbands and powers (seeded by ``seed``) and
    the best run is returned.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if restarts < 0:
        raise ValueError("restarts must be >= 0")
    N, _, M = g.shape
    idx = np.arange(N)
    start_sub = np.argmax(g[idx, idx, :], axis=1)
    run = dict(max_iter=max_iter, tol=tol, cap_db=cap_db, reassign=reassign, cap_aware=cap_aware)
    best = _fp_run(g, noise, p_max, start_sub, np.full(N, float(p_max)), **run)
    for k in range(restarts):
        rng = substream(seed, "fp-restart", k)
        sub = rng.integers(M, size=N) if reassign else start_sub
        state = _fp_run(g, noise, p_max, sub, rng.uniform(0.0, p_max, size=N), **run)
        if state.objective > best.objective:
            best = state
    return Allocation(best.subband, best.p), best


class DelayedFp:
    """FP computed on the previous slot's gains and applied in the current slot."""

    def __init__(self, noise, p_max, **solver_kw):
        self.kw = dict(noise=noise, p_max=p_max, **solver_kw)
        self._pending = None
        self.last_state = None

    def observe(self, t, g):
        """Record slot t's gains; the solve becomes usable at slot t + 1."""
        alloc, self.last_state = fp_solve(g, **self.kw)
        self._pending = (t + 1, alloc)

    def observe_solution(self, t, alloc, state):
        self._pending = (t + 1, alloc)
        self.last_state = state

    def allocate(self, t):
        if t < 1 or self._pending is None or self._pending[0] != t:
            raise RuntimeError(f"no FP solution from slot {t - 1} available at slot {t}")
        return self._pending[1]


def fp_delayed(g_prev, t, noise, p_max, **kw):
    """Allocation for slot ``t`` solved on slot ``t - 1`` gains."""
    if t < 1:
        raise ValueError("delayed FP needs a previous slot")
    return fp_solve(g_prev, noise, p_max, **kw)[0]


def random_alloc(rng, N, M, p_max):
    return Allocation(rng.integers(M, size=N), rng.uniform(0.0, p_max, size=N))


def write_fp_diagnostics(state, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "objective"])
        for i, obj in enumerate(state.history):
            w.writerow([i, repr(obj)])
