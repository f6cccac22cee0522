import json

import numpy as np
import pytest

from spectrumrl.neural import Adam, Mlp, TargetSync, clip_by_global_norm


def rel_err(a, b, floor=1e-7):
    return abs(a - b) / max(abs(a), abs(b), floor)


def straight_line_forward(net, x):
    """Independent re-evaluation with explicit loops over units."""
    a = list(x)
    for W, b, act in zip(net.W, net.b, net.activations):
        z = [sum(a[i] * W[i, j] for i in range(len(a))) + b[j] for j in range(W.shape[1])]
        if act == "relu":
            a = [max(v, 0.0) for v in z]
        elif act == "sigmoid":
            a = [1.0 / (1.0 + np.exp(-v)) for v in z]
        else:
            a = z
    return np.array(a)


def make_net(sizes, out_act="identity", hidden_act="relu", seed=0):
    return Mlp.create(sizes, np.random.default_rng(seed), output_activation=out_act, hidden_activation=hidden_act)


def test_zero_weights_output_is_activation_of_bias():
    net = make_net([3, 2], out_act="sigmoid")
    net.W[0][:] = 0.0
    net.b[0][:] = [0.0, 2.0]
    np.testing.assert_allclose(net.forward(np.ones(3)), 1 / (1 + np.exp(-np.array([0.0, 2.0]))))


def test_single_affine_layer():
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([0.5, -0.5])
    net = Mlp([2, 2], ["identity"], [W], [b])
    x = np.array([1.0, -1.0])
    np.testing.assert_array_equal(net.forward(x), x @ W + b)


@pytest.mark.parametrize("out_act", ["identity", "sigmoid"])
def test_forward_matches_straight_line(out_act):
    net = make_net([4, 6, 5, 3], out_act=out_act, seed=2)
    x = np.random.default_rng(3).normal(size=4)
    np.testing.assert_allclose(net.forward(x), straight_line_forward(net, x), rtol=0, atol=1e-12)


def test_forward_deterministic_and_shape_errors():
    net = make_net([3, 4, 2])
    x = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(net.forward(x), net.forward(x))
    with pytest.raises(ValueError):
        net.forward(np.ones(4))
    with pytest.raises(ValueError):
        net.backward(None, np.ones(2))


def fd_check(net, x, upstream, n_params=20, seed=0, h=1e-5):
    """Central finite differences of sum(upstream * net(x)) for random parameters and all inputs."""
    out, trace = net.forward(x, cache=True)
    grads, g_in = net.backward(trace, upstream)
    rng = np.random.default_rng(seed)
    params = net.params

    def loss():
        return float(np.sum(upstream * net.forward(x)))

    worst = 0.0
    for _ in range(n_params):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + h
        up = loss()
        params[k][idx] = old - h
        down = loss()
        params[k][idx] = old
        worst = max(worst, rel_err((up - down) / (2 * h), grads[k][idx]))
    worst_in = 0.0
    for b in range(x.shape[0]):
        for i in range(x.shape[1]):
            xp, xm = x.copy(), x.copy()
            xp[b, i] += h
            xm[b, i] -= h
            fd = (np.sum(upstream * net.forward(xp)) - np.sum(upstream * net.forward(xm))) / (2 * h)
            worst_in = max(worst_in, rel_err(fd, g_in[b, i]))
    return worst, worst_in


@pytest.mark.parametrize("n_layers", [2, 3, 4])
@pytest.mark.parametrize("hidden_act,out_act", [("relu", "identity"), ("relu", "sigmoid"), ("sigmoid", "identity")])
def test_gradients_match_finite_differences(n_layers, hidden_act, out_act):
    sizes = [5] + [7] * (n_layers - 1) + [3]
    net = make_net(sizes, out_act=out_act, hidden_act=hidden_act, seed=n_layers)
    rng = np.random.default_rng(10 + n_layers)
    x = rng.normal(size=(4, 5))
    upstream = rng.normal(size=(4, 3))
    worst, worst_in = fd_check(net, x, upstream)
    assert worst < 1e-5
    assert worst_in < 1e-5


def test_zero_upstream_gives_zero_gradients():
    net = make_net([3, 4, 2])
    _, trace = net.forward(np.ones((2, 3)), cache=True)
    grads, g_in = net.backward(trace, np.zeros((2, 2)))
    assert all(np.all(g == 0) for g in grads)
    assert np.all(g_in == 0)


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    net = Mlp([1, 1], ["identity"], [np.array([[1.0]])], [np.array([0.0])])
    opt = Adam(net)
    opt.apply(net, [np.array([[1.0]]), np.array([0.0])], 0.1)
    w = net.W[0].copy()
    m_before = opt.m[0].copy()
    v_before = opt.v[0].copy()
    opt.apply(net, [np.zeros((1, 1)), np.zeros(1)], 0.1)
    # bias-corrected first moment is non-zero, so the weight still moves; the bias does not
    assert net.b[0][0] == 0.0
    np.testing.assert_allclose(opt.m[0], 0.9 * m_before)
    np.testing.assert_allclose(opt.v[0], 0.999 * v_before)
    fresh = Mlp([1, 1], ["identity"], [np.array([[1.0]])], [np.array([0.0])])
    Adam(fresh).apply(fresh, [np.zeros((1, 1)), np.zeros(1)], 0.1)
    assert fresh.W[0][0, 0] == 1.0 and not np.any(w != w)


def test_adam_matches_hand_recursion():
    w0 = 0.3
    net = Mlp([1, 1], ["identity"], [np.array([[w0]])], [np.array([0.0])])
    opt = Adam(net, clip_norm=None)
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    m = v = 0.0
    w = w0
    for t, g in enumerate([0.5, -0.2, 0.7], start=1):
        opt.apply(net, [np.array([[g]]), np.array([0.0])], lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert net.W[0][0, 0] == pytest.approx(w, abs=1e-12)


def test_adam_converges_on_quadratic_bowl():
    net = Mlp([1, 1], ["identity"], [np.array([[1.0]])], [np.array([0.0])])
    opt = Adam(net, clip_norm=None)
    for step in range(2000):
        w = net.W[0][0, 0]
        opt.apply(net, [np.array([[2 * w]]), np.zeros(1)], 0.01 * 0.998**step)
    assert abs(net.W[0][0, 0]) < 1e-3


def test_adam_rejects_non_finite():
    net = make_net([2, 2])
    opt = Adam(net)
    grads = [np.full_like(p, np.nan) for p in net.params]
    with pytest.raises(FloatingPointError):
        opt.apply(net, grads, 0.01)


def test_small_step_never_increases_quadratic_loss():
    rng = np.random.default_rng(0)
    for trial in range(10):
        net = make_net([4, 8, 8, 2], seed=trial)
        x = rng.normal(size=(16, 4))
        y = rng.normal(size=(16, 2))
        out, trace = net.forward(x, cache=True)
        loss0 = np.mean((out - y) ** 2)
        grads, _ = net.backward(trace, 2 * (out - y) / out.size)
        Adam(net).apply(net, grads, 1e-6)
        assert np.mean((net.forward(x) - y) ** 2) <= loss0


def test_global_norm_clipping():
    grads = [np.array([3.0]), np.array([4.0])]
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.sqrt(sum(float(g @ g) for g in clipped)) == pytest.approx(1.0)


def test_target_sync_period():
    net = make_net([2, 2])
    sync = TargetSync(net, period=100)
    np.testing.assert_array_equal(sync.target.W[0], net.W[0])
    copies = []
    for step in range(1, 301):
        net.W[0] += 1.0
        if sync.tick():
            copies.append(step)
            np.testing.assert_array_equal(sync.target.W[0], net.W[0])
        else:
            assert not np.array_equal(sync.target.W[0], net.W[0])
    assert copies == [100, 200, 300]


def test_save_load_roundtrip(tmp_path):
    net = make_net([3, 5, 1], out_act="sigmoid")
    path = tmp_path / "net.json"
    net.save(path)
    header = json.loads(path.read_text())
    assert header["sizes"] == [3, 5, 1]
    back = Mlp.load(path)
    x = np.random.default_rng(0).normal(size=(2, 3))
    np.testing.assert_array_equal(back.forward(x), net.forward(x))
