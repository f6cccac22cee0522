"""Cellular deployments, large-scale fading and Jakes small-scale fading.

Gains are indexed ``g[n, l, m]``: transmitter ``n`` to receiver ``l`` on
subband ``m``.  All quantities are linear unless the name says dB.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .rng import substream

SQRT3 = math.sqrt(3.0)
MIN_DISTANCE_M = 10.0

# Axial (q, r) coordinates of pointy-top hexagons.  K=5 is the centre cell
# plus its east, west, north-east and south-west neighbours; K=10 is a
# compact 3-4-3 block of rows.
HEX_LAYOUTS = {
    1: [(0, 0)],
    5: [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)],
    7: [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)],
    10: [(0, -1), (1, -1), (2, -1), (-1, 0), (0, 0), (1, 0), (2, 0), (-1, 1), (0, 1), (1, 1)],
}


@dataclass
class Deployment:
    K: int
    N: int
    cell_radius: float
    cell_centers: np.ndarray  # (K, 2) meters
    tx_positions: np.ndarray  # (N, 2)
    rx_positions: np.ndarray  # (N, 2)
    cell_of_link: np.ndarray  # (N,)

    def distances(self):
        """Matrix ``d[n, l]`` of transmitter n to receiver l distances in meters."""
        diff = self.tx_positions[:, None, :] - self.rx_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])


def hex_centers(K, cell_radius):
    if K not in HEX_LAYOUTS:
        raise ValueError(f"unsupported cell count K={K}; supported: {sorted(HEX_LAYOUTS)}")
    axial = np.array(HEX_LAYOUTS[K], dtype=float)
    x = SQRT3 * cell_radius * (axial[:, 0] + axial[:, 1] / 2.0)
    y = 1.5 * cell_radius * axial[:, 1]
    return np.stack([x, y], axis=1)


def in_hexagon(points, center, cell_radius):
    """True for points inside the pointy-top hexagon of circumradius ``cell_radius``."""
    rel = np.abs(np.asarray(points, dtype=float) - center)
    return (rel[..., 0] <= SQRT3 / 2.0 * cell_radius) & (
        rel[..., 1] <= cell_radius - rel[..., 0] / SQRT3 + 1e-9
    )


def generate_deployment(K, N, cell_radius=400.0, seed=0):
    """Place K hexagonal cells and N/K uniformly random receivers per cell.

    Receivers are drawn by rejection sampling from the bounding box of their
    hexagon, discarding points closer than ``MIN_DISTANCE_M`` to the cell
    centre.
    """
    if cell_radius <= 0:
        raise ValueError("cell_radius must be positive")
    if N <= 0 or N % K != 0:
        raise ValueError(f"N={N} must be a positive multiple of K={K}")
    centers = hex_centers(K, cell_radius)
    rng = substream(seed, "deployment")
    per_cell = N // K
    half_w = SQRT3 / 2.0 * cell_radius
    rx = np.empty((N, 2))
    cell_of_link = np.repeat(np.arange(K), per_cell)
    for n in range(N):
        center = centers[cell_of_link[n]]
        while True:
            offset = rng.uniform([-half_w, -cell_radius], [half_w, cell_radius])
            if in_hexagon(offset, 0.0, cell_radius) and np.hypot(*offset) >= MIN_DISTANCE_M:
                break
        rx[n] = center + offset
    return Deployment(
        K=K,
        N=N,
        cell_radius=float(cell_radius),
        cell_centers=centers,
        tx_positions=centers[cell_of_link].copy(),
        rx_positions=rx,
        cell_of_link=cell_of_link,
    )


def pathloss_db(d_km):
    """LTE macro path loss ``128.1 + 37.6 log10(d)`` with d in km."""
    d_km = np.asarray(d_km, dtype=float)
    if np.any(d_km <= 0):
        raise ValueError("distance must be positive")
    out = 128.1 + 37.6 * np.log10(d_km)
    return float(out) if out.ndim == 0 else out


def sample_large_scale(dep, shadow_std_db=10.0, seed=0):
    """Path loss plus log-normal shadowing, linear scale.

    Shadowing is i.i.d. per (transmitter site, receiver) pair: the transmitters
    of one cell share a site, so they share the shadowing towards a receiver.
    """
    if shadow_std_db < 0:
        raise ValueError("shadow_std_db must be nonnegative")
    rng = substream(seed, "shadowing")
    per_site = rng.normal(0.0, 1.0, size=(dep.K, dep.N)) * shadow_std_db
    shadow = per_site[dep.cell_of_link]
    loss_db = pathloss_db(dep.distances() / 1000.0) + shadow
    return 10.0 ** (-loss_db / 10.0)


def bessel_j0(x, terms=20):
    """J0 by its alternating power series, truncated after ``terms`` terms past k=0.

    Accurate to well below 1e-6 for |x| <= 12.
    """
    x = np.asarray(x, dtype=float)
    q = -(x / 2.0) ** 2
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, terms + 1):
        term = term * q / (k * k)
        total = total + term
    return float(total) if total.ndim == 0 else total


def jakes_rho(f_d, T):
    """Lag-one correlation ``J0(2 pi f_d T)`` of the Gauss-Markov fading."""
    if f_d < 0 or T <= 0:
        raise ValueError("need f_d >= 0 and T > 0")
    x = 2.0 * math.pi * f_d * T
    if x > 12.0:
        raise ValueError(f"2*pi*f_d*T={x:.3f} outside the series range [0, 12]")
    return bessel_j0(x)


def complex_gaussian(rng, shape):
    """Circularly symmetric complex Gaussian samples with unit variance."""
    z = rng.standard_normal(size=shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)


@dataclass
class SmallScaleFading:
    h: np.ndarray  # (N, N, M) complex
    rho: float


def init_fading(N, M, rho, rng):
    return SmallScaleFading(h=complex_gaussian(rng, (N, N, M)), rho=float(rho))


def evolve_fading(fading, rng):
    """One step of ``h <- rho h + sqrt(1 - rho^2) e`` with fresh innovations."""
    e = complex_gaussian(rng, fading.h.shape)
    rho = fading.rho
    return SmallScaleFading(h=rho * fading.h + math.sqrt(1.0 - rho * rho) * e, rho=rho)


def gains(beta, fading):
    h = fading.h if isinstance(fading, SmallScaleFading) else np.asarray(fading)
    beta = np.asarray(beta, dtype=float)
    if h.shape[:2] != beta.shape:
        raise ValueError(f"shape mismatch: beta {beta.shape} vs h {h.shape}")
    return beta[:, :, None] * (h.real ** 2 + h.imag ** 2)


class ChannelProcess:
    """Evolves the gain tensor of one deployment slot by slot.

    Each call of :meth:`advance` draws innovations from a stream dedicated to
    this deployment, so two instances built from the same seed produce
    bit-identical gain sequences.
    """

    def __init__(self, dep, beta, M, rho, seed):
        self.dep = dep
        self.beta = beta
        self.M = M
        self.rho = rho
        self.fading = init_fading(dep.N, M, rho, substream(seed, "fading-init"))
        self._innov = substream(seed, "innovations")
        self.slot = 0
        self.g = gains(beta, self.fading)

    def advance(self):
        self.fading = evolve_fading(self.fading, self._innov)
        self.slot += 1
        self.g = gains(self.beta, self.fading)
        return self.g


def dump_deployment(dep, beta, path):
    doc = {
        "K": dep.K,
        "N": dep.N,
        "cell_radius_m": dep.cell_radius,
        "cell_centers_m": dep.cell_centers.tolist(),
        "tx_positions_m": dep.tx_positions.tolist(),
        "rx_positions_m": dep.rx_positions.tolist(),
        "cell_of_link": dep.cell_of_link.tolist(),
        "beta_db": (10.0 * np.log10(beta)).tolist(),
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_deployment(path):
    with open(path) as f:
        doc = json.load(f)
    dep = Deployment(
        K=doc["K"],
        N=doc["N"],
        cell_radius=doc["cell_radius_m"],
        cell_centers=np.array(doc["cell_centers_m"]),
        tx_positions=np.array(doc["tx_positions_m"]),
        rx_positions=np.array(doc["rx_positions_m"]),
        cell_of_link=np.array(doc["cell_of_link"], dtype=int),
    )
    return dep, 10.0 ** (np.array(doc["beta_db"]) / 10.0)
