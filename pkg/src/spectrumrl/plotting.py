"""Figures rendered next to the CSV outputs (headless matplotlib)."""

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SCHEME_ORDER = ("proposed", "joint", "ideal_fp", "delayed_fp", "random")


def read_curve(path):
    """Columns of a training-curve CSV as float arrays (blank cells become NaN)."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) if r[k] != "" else np.nan for r in rows]) for k in rows[0]}


def plot_training_curves(curves, path, slots_per_episode=None):
    """Moving-average sum-rate and reward per slot, one line per scheme.

    ``curves`` maps a scheme name to a training-curve CSV path or to the
    dict returned by :func:`read_curve`.
    """
    loaded = {s: c if isinstance(c, dict) else read_curve(c) for s, c in curves.items()}
    loaded = {s: c for s, c in loaded.items() if c}
    fig, (ax_rate, ax_rew) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for scheme, curve in loaded.items():
        ax_rate.plot(curve["slot"], curve["sum_rate_ma"], label=scheme, lw=1.2)
        ax_rew.plot(curve["slot"], curve["reward_ma"], label=scheme, lw=1.2)
    if slots_per_episode and loaded:
        end = max(c["slot"].size for c in loaded.values())
        for x in range(slots_per_episode, end, slots_per_episode):
            for ax in (ax_rate, ax_rew):
                ax.axvline(x, color="0.7", lw=0.8, ls="--")
    ax_rate.set_ylabel("sum-rate per link (bps/Hz)")
    ax_rew.set_ylabel("mean reward")
    ax_rew.set_xlabel("time slot")
    if loaded:
        ax_rate.legend(loc="lower right")
    ax_rate.grid(alpha=0.3)
    ax_rew.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_test_table(rows, path):
    """Grouped bars of test sum-rate per link: one group per (K, N, M)."""
    configs = sorted({(int(r["K"]), int(r["N"]), int(r["M"])) for r in rows})
    schemes = [s for s in SCHEME_ORDER if any(r["scheme"] == s for r in rows)]
    value = {(int(r["K"]), int(r["N"]), int(r["M"]), r["scheme"]): float(r["sum_rate_per_link"]) for r in rows}
    fig, ax = plt.subplots(figsize=(max(5, 1.8 * len(configs) + 2), 4))
    width = 0.8 / max(len(schemes), 1)
    x = np.arange(len(configs))
    for i, s in enumerate(schemes):
        heights = [value.get((*c, s), np.nan) for c in configs]
        ax.bar(x + (i - (len(schemes) - 1) / 2) * width, heights, width, label=s)
    ax.set_xticks(x)
    ax.set_xticklabels([f"K={k}, N={n}\nM={m}" for k, n, m in configs])
    ax.set_ylabel("sum-rate per link (bps/Hz)")
    if schemes:
        ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
