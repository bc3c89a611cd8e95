"""Small dense networks, their optimizer, and weight files.

Plain numpy multilayer perceptrons with explicit forward and backward
passes.  Nothing in this module knows about traffic; the trainer in
ppo.py composes these with the masked policies from agents.py.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

WEIGHT_MAGIC = b"ARTP"
WEIGHT_VERSION = 1


class Mlp:
    """ReLU hidden layers, linear output, float64 throughout."""

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output size")
        self.sizes = tuple(int(s) for s in sizes)
        if any(s <= 0 for s in self.sizes):
            raise ValueError("layer sizes must be positive")
        if rng is None:
            rng = np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            # small random biases keep dead inputs off the ReLU kink
            self.biases.append(rng.standard_normal(fan_out) * 0.01)

    def forward(self, x):
        """Returns (output, cache); the cache feeds backward()."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {x.shape[1]}")
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if layer < last:
                h = np.maximum(h, 0.0)
            cache.append(h)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Parameter gradients of sum(grad_out * output).

        grad_out has the output's shape; returns grads aligned with
        parameters().
        """
        g = np.asarray(grad_out, dtype=float)
        grads: list[np.ndarray | None] = [None] * (2 * len(self.weights))
        for layer in range(len(self.weights) - 1, -1, -1):
            if layer < len(self.weights) - 1:
                g = g * (cache[layer + 1] > 0.0)
            grads[2 * layer] = cache[layer].T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            if layer > 0:
                g = g @ self.weights[layer].T
        return grads

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=float)
        offset = 0
        for p in self.parameters():
            p[...] = vec[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != vec.size:
            raise ValueError("flat vector length does not match the network")

    def state(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def load_state(self, state) -> None:
        params = self.parameters()
        if len(state) != len(params):
            raise ValueError("state does not match the network layout")
        for p, s in zip(params, state):
            p[...] = s


class Adam:
    """Moment-based gradient descent; step() subtracts the update."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads, lr: float) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match the parameters")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class PolicyParams:
    """Separate policy and value networks for one coordination mode."""

    mode: str
    policy: Mlp
    value: Mlp

    def __post_init__(self):
        if self.value.sizes[-1] != 1:
            raise ValueError("value network must have a single output")
        if self.policy.sizes[0] != self.value.sizes[0]:
            raise ValueError("policy and value inputs differ")

    def copy(self) -> "PolicyParams":
        policy = Mlp(self.policy.sizes)
        policy.load_state(self.policy.state())
        value = Mlp(self.value.sizes)
        value.load_state(self.value.state())
        return PolicyParams(self.mode, policy, value)

    def serialize(self) -> bytes:
        tag = self.mode.encode("utf-8")
        out = [struct.pack("<4sHH", WEIGHT_MAGIC, WEIGHT_VERSION, len(tag)), tag]
        for net in (self.policy, self.value):
            out.append(struct.pack("<I", len(net.sizes)))
            out.append(struct.pack(f"<{len(net.sizes)}I", *net.sizes))
            for p in net.parameters():
                out.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return b"".join(out)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.serialize())

    @classmethod
    def deserialize(cls, data: bytes) -> "PolicyParams":
        magic, version, tag_len = struct.unpack_from("<4sHH", data, 0)
        if magic != WEIGHT_MAGIC:
            raise ValueError("not a weight file")
        if version != WEIGHT_VERSION:
            raise ValueError(f"unsupported weight format version {version}")
        offset = 8
        mode = data[offset:offset + tag_len].decode("utf-8")
        offset += tag_len
        nets = []
        for _ in range(2):
            (n_sizes,) = struct.unpack_from("<I", data, offset)
            offset += 4
            sizes = struct.unpack_from(f"<{n_sizes}I", data, offset)
            offset += 4 * n_sizes
            net = Mlp(sizes)
            for p in net.parameters():
                raw = np.frombuffer(data, dtype="<f8", count=p.size, offset=offset)
                p[...] = raw.reshape(p.shape)
                offset += 8 * p.size
            nets.append(net)
        if offset != len(data):
            raise ValueError("trailing bytes in weight file")
        return cls(mode, nets[0], nets[1])

    @classmethod
    def load(cls, path) -> "PolicyParams":
        with open(path, "rb") as fh:
            return cls.deserialize(fh.read())


def fresh_params(mode: str, obs_dim: int, n_actions: int, hidden, rng) -> PolicyParams:
    policy = Mlp((obs_dim, *hidden, n_actions), rng)
    value = Mlp((obs_dim, *hidden, 1), rng)
    return PolicyParams(mode, policy, value)


def params_checksum(params: PolicyParams) -> str:
    """Hex digest of the serialized weights; stable across save/load."""
    return hashlib.sha256(params.serialize()).hexdigest()
