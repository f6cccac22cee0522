"""Small feed-forward networks in numpy: forward, exact backprop, Adam.

Batches are row-major: ``x`` has shape (batch, in_features).
"""

import json
import math

import numpy as np

ACTIVATIONS = ("relu", "identity", "sigmoid")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


class Mlp:
    """Weights ``W[k]`` of shape (in, out) and biases ``b[k]`` of shape (out,)."""

    def __init__(self, sizes, activations, weights, biases):
        if len(weights) != len(sizes) - 1 or len(activations) != len(weights):
            raise ValueError("layer count mismatch")
        for k, (W, b) in enumerate(zip(weights, biases)):
            if W.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ValueError(f"layer {k}: bad shapes {W.shape}, {b.shape}")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a}")
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.W = [np.asarray(W, dtype=np.float64) for W in weights]
        self.b = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def create(cls, sizes, rng, output_activation="identity", hidden_activation="relu"):
        """Fan-in scaled uniform initialization ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        acts = [hidden_activation] * (len(sizes) - 2) + [output_activation]
        return cls(sizes, acts, weights, biases)

    @property
    def params(self):
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def copy(self):
        return Mlp(self.sizes, self.activations, [W.copy() for W in self.W], [b.copy() for b in self.b])

    def load_from(self, other):
        """Hard copy of ``other``'s parameters into this network, in place."""
        for dst, src in zip(self.params, other.params):
            if dst.shape != src.shape:
                raise ValueError("shape mismatch in target update")
            dst[...] = src

    def forward(self, x, cache=False):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {a.shape[1]} != {self.sizes[0]}")
        trace = [a]
        for W, b, act in zip(self.W, self.b, self.activations):
            z = a @ W + b
            a = _act(act, z)
            trace += [z, a]
        out = a[0] if single else a
        return (out, trace) if cache else out

    def backward(self, trace, grad_out):
        """Gradients of ``sum(grad_out * output)`` w.r.t. every parameter and the input.

        ``trace`` is the cache returned by ``forward(x, cache=True)``.
        Returns ``(grads, grad_input)`` where ``grads`` follows :attr:`params`.
        """
        if trace is None:
            raise ValueError("backward needs the forward cache")
        delta = np.asarray(grad_out, dtype=np.float64)
        if delta.ndim == 1:
            delta = delta[None, :]
        n_layers = len(self.W)
        grads = [None] * (2 * n_layers)
        for k in reversed(range(n_layers)):
            a_in, z, a_out = trace[2 * k], trace[2 * k + 1], trace[2 * k + 2]
            delta = delta * _act_grad(self.activations[k], z, a_out)
            grads[2 * k] = a_in.T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
            delta = delta @ self.W[k].T
        return grads, delta

    def all_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.params)

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "activations": self.activations,
            "weights": [W.tolist() for W in self.W],
            "biases": [b.tolist() for b in self.b],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["sizes"],
            d["activations"],
            [np.array(W, dtype=np.float64) for W in d["weights"]],
            [np.array(b, dtype=np.float64) for b in d["biases"]],
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def clip_by_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


class Adam:
    """Adam with bias correction; moments live here and persist across steps."""

    def __init__(self, net, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=1.0):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]
        self.t = 0

    def apply(self, net, grads, lr):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise FloatingPointError("non-finite gradient; update rejected")
        grads, _ = clip_by_global_norm(grads, self.clip_norm)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(net.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        if not net.all_finite():
            raise FloatingPointError("non-finite parameters after update")

    def to_dict(self):
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    def load_dict(self, d):
        self.t = d["t"]
        self.m = [np.array(a, dtype=np.float64) for a in d["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in d["v"]]


class TargetSync:
    """Hard-copies an online network into its target every ``period`` trainer steps."""

    def __init__(self, online, period=100):
        self.online = online
        self.target = online.copy()
        self.period = period
        self.steps = 0

    def tick(self):
        self.steps += 1
        if self.steps % self.period == 0:
            self.target.load_from(self.online)
            return True
        return False
