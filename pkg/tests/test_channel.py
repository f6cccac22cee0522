import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import j0 as scipy_j0

from spectrumrl import channel
from spectrumrl.rng import substream


def series_j0(x, terms=80):
    """Independent J0 oracle: long power series summed with math.fsum."""
    half = x / 2.0
    return math.fsum((-1) ** k * half ** (2 * k) / math.factorial(k) ** 2 for k in range(terms))


@pytest.mark.parametrize("K,N", [(5, 20), (1, 1), (10, 50), (7, 14)])
def test_deployment_invariants(K, N):
    dep = channel.generate_deployment(K, N, 400.0, seed=3)
    assert dep.cell_centers.shape == (K, 2)
    assert np.bincount(dep.cell_of_link, minlength=K).tolist() == [N // K] * K
    np.testing.assert_array_equal(dep.tx_positions, dep.cell_centers[dep.cell_of_link])
    for n in range(N):
        center = dep.cell_centers[dep.cell_of_link[n]]
        assert channel.in_hexagon(dep.rx_positions[n], center, 400.0)
        assert np.hypot(*(dep.rx_positions[n] - center)) >= channel.MIN_DISTANCE_M


def test_single_cell_receiver_within_radius():
    dep = channel.generate_deployment(1, 1, 400.0, seed=11)
    assert np.hypot(*dep.rx_positions[0]) <= 400.0


def test_deployment_deterministic():
    a = channel.generate_deployment(5, 20, 400.0, seed=9)
    b = channel.generate_deployment(5, 20, 400.0, seed=9)
    np.testing.assert_array_equal(a.rx_positions, b.rx_positions)


def test_hex_neighbours_are_adjacent():
    centers = channel.hex_centers(5, 400.0)
    d = np.hypot(*(centers[1:] - centers[0]).T)
    np.testing.assert_allclose(d, math.sqrt(3) * 400.0)


@pytest.mark.parametrize("K,N", [(4, 8), (5, 21), (5, 0)])
def test_deployment_errors(K, N):
    with pytest.raises(ValueError):
        channel.generate_deployment(K, N, 400.0, seed=0)


def test_pathloss_values():
    assert channel.pathloss_db(1.0) == pytest.approx(128.1)
    assert channel.pathloss_db(0.4) == pytest.approx(113.14, abs=0.01)
    assert channel.pathloss_db(0.1) == pytest.approx(90.5, abs=1e-9)
    with pytest.raises(ValueError):
        channel.pathloss_db(0.0)


@given(st.floats(1e-3, 10.0), st.floats(1e-3, 10.0))
def test_pathloss_increasing(d1, d2):
    if d1 < d2:
        assert channel.pathloss_db(d1) < channel.pathloss_db(d2)


def test_large_scale_without_shadowing():
    dep = channel.Deployment(
        K=1,
        N=1,
        cell_radius=2000.0,
        cell_centers=np.zeros((1, 2)),
        tx_positions=np.zeros((1, 2)),
        rx_positions=np.array([[1000.0, 0.0]]),
        cell_of_link=np.zeros(1, dtype=int),
    )
    beta = channel.sample_large_scale(dep, 0.0, seed=1)
    assert beta[0, 0] == pytest.approx(10 ** (-12.81), rel=1e-12)


def test_shadowing_std_and_determinism():
    dep = channel.generate_deployment(1, 100, 400.0, seed=2)
    pl = channel.pathloss_db(dep.distances() / 1000)
    # one site, so row 0 holds the 100 independent (site, receiver) draws
    sample = np.concatenate(
        [(-10 * np.log10(channel.sample_large_scale(dep, 10.0, seed=s)) - pl)[0] for s in range(100)]
    )
    assert sample.std() == pytest.approx(10.0, abs=0.3)
    np.testing.assert_array_equal(
        channel.sample_large_scale(dep, 10.0, seed=4), channel.sample_large_scale(dep, 10.0, seed=4)
    )
    assert np.all(channel.sample_large_scale(dep, 10.0, seed=4) > 0)


def test_colocated_transmitters_share_shadowing():
    dep = channel.generate_deployment(5, 20, 400.0, seed=1)
    beta = channel.sample_large_scale(dep, 10.0, seed=1)
    # links 0..3 sit in cell 0: identical site, identical distance and shadowing
    np.testing.assert_allclose(beta[0], beta[1])


def test_jakes_rho_values():
    assert channel.jakes_rho(0.0, 0.02) == 1.0
    assert channel.jakes_rho(10.0, 0.02) == pytest.approx(series_j0(0.4 * math.pi), abs=1e-12)
    assert channel.jakes_rho(10.0, 0.02) == pytest.approx(0.6425, abs=1e-3)
    assert channel.bessel_j0(2.40483) == pytest.approx(0.0, abs=1e-4)


def test_j0_accuracy_against_oracles():
    xs = np.linspace(0.0, 10.0, 201)
    ours = channel.bessel_j0(xs)
    oracle = np.array([series_j0(x) for x in xs])
    assert np.max(np.abs(ours - oracle)) < 1e-6
    assert np.max(np.abs(ours - scipy_j0(xs))) < 1e-6


def test_evolve_extremes():
    rng = np.random.default_rng(0)
    f = channel.init_fading(3, 2, 1.0, rng)
    np.testing.assert_array_equal(channel.evolve_fading(f, rng).h, f.h)
    f0 = channel.SmallScaleFading(f.h, 0.0)
    r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
    np.testing.assert_allclose(channel.evolve_fading(f0, r1).h, channel.complex_gaussian(r2, f.h.shape))


def test_fading_statistics():
    rho = channel.jakes_rho(10.0, 0.02)
    rng = substream(0, "test-fading")
    f = channel.init_fading(1, 2, rho, rng)
    T = 100_000
    series = np.empty((T, 2), dtype=complex)
    for t in range(T):
        f = channel.evolve_fading(f, rng)
        series[t] = f.h[0, 0]
    power = np.abs(series) ** 2
    assert power.mean() == pytest.approx(1.0, abs=0.02)
    assert np.mean(power[:, 0] > 1.0) == pytest.approx(math.exp(-1), abs=0.01)
    x = series[:, 0]
    lag1 = np.real(np.vdot(x[:-1], x[1:])) / np.real(np.vdot(x, x))
    assert lag1 == pytest.approx(rho, abs=0.02)
    assert np.var(x[1000:]) == pytest.approx(1.0, abs=0.05)
    assert np.corrcoef(power[:, 0], power[:, 1])[0, 1] == pytest.approx(0.0, abs=0.02)


def test_gains():
    h = np.ones((1, 1, 1), dtype=complex)
    assert channel.gains(np.array([[2.0]]), h)[0, 0, 0] == 2.0
    assert channel.gains(np.array([[2.0]]), np.zeros((1, 1, 1)))[0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        channel.gains(np.ones((2, 2)), np.ones((3, 3, 1)))
    rng = np.random.default_rng(1)
    h = channel.complex_gaussian(rng, (1, 1, 100_000))
    assert channel.gains(np.array([[3.0]]), h).mean() / 3.0 == pytest.approx(1.0, abs=0.02)


def test_channel_process_deterministic():
    dep = channel.generate_deployment(5, 20, 400.0, seed=1)
    beta = channel.sample_large_scale(dep, 10.0, seed=1)
    a = channel.ChannelProcess(dep, beta, 3, 0.6, seed=4)
    b = channel.ChannelProcess(dep, beta, 3, 0.6, seed=4)
    for _ in range(5):
        np.testing.assert_array_equal(a.advance(), b.advance())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_substreams_independent_of_each_other(seed):
    a = substream(seed, "shadowing").random(4)
    b = substream(seed, "deployment").random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, substream(seed, "shadowing").random(4))


def test_deployment_json_roundtrip(tmp_path):
    dep = channel.generate_deployment(5, 20, 400.0, seed=1)
    beta = channel.sample_large_scale(dep, 10.0, seed=1)
    path = tmp_path / "dep.json"
    channel.dump_deployment(dep, beta, path)
    dep2, beta2 = channel.load_deployment(path)
    np.testing.assert_allclose(dep2.rx_positions, dep.rx_positions)
    np.testing.assert_allclose(beta2, beta, rtol=1e-12)
