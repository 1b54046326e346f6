"""Small numpy networks: GCN propagation, max pooling, MLP heads, Adam, replay.

Everything is float64 and differentiated by hand. Batched inputs carry a
leading batch axis: node features ``(B, n, d)``, adjacencies ``(B, n, n)``,
vectors ``(B, d)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "identity")


class NonFiniteGradient(FloatingPointError):
    pass


def normalize_adjacency(G) -> np.ndarray:
    """Symmetric normalization ``D^-1/2 (G + I) D^-1/2``; accepts ``(n, n)`` or ``(B, n, n)``."""
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[-1]
    Gt = G + np.eye(n)
    d = Gt.sum(axis=-1)
    inv = 1.0 / np.sqrt(d)
    return Gt * inv[..., :, None] * inv[..., None, :]


class ValueNet:
    """A chain of dense layers, optionally with graph propagation before each.

    With ``propagate=True`` each layer computes ``act(A @ X @ W)`` (the GCN
    rule); otherwise ``act(X @ W + b)``. Hidden layers use ReLU; the output
    activation is configurable.
    """

    def __init__(self, dims, out_activation="identity", bias=True, propagate=False, seed=None):
        if len(dims) < 2:
            raise ValueError("need at least an input and an output dimension")
        if out_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {out_activation!r}")
        self.dims = [int(d) for d in dims]
        self.out_activation = out_activation
        self.bias = bias
        self.propagate = propagate
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for d_in, d_out in zip(self.dims[:-1], self.dims[1:]):
            bound = 1.0 / np.sqrt(d_in)
            self.weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            self.biases.append(rng.uniform(-bound, bound, size=d_out) if bias else np.zeros(d_out))

    @property
    def layer_specs(self) -> list[tuple[int, int, str]]:
        acts = ["relu"] * (len(self.dims) - 2) + [self.out_activation]
        return [(i, o, a) for i, o, a in zip(self.dims[:-1], self.dims[1:], acts)]

    def parameters(self) -> list[np.ndarray]:
        if self.bias:
            return [x for pair in zip(self.weights, self.biases) for x in pair]
        return list(self.weights)

    def zero_like_params(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.parameters()]

    def copy(self) -> "ValueNet":
        other = ValueNet.__new__(ValueNet)
        other.__dict__.update(self.__dict__)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def load_from(self, other: "ValueNet") -> None:
        if self.layer_specs != other.layer_specs or self.bias != other.bias:
            raise ValueError("cannot copy between nets of different shape")
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        sizes = [p.size for p in self.parameters()]
        if vec.size != sum(sizes):
            raise ValueError(f"expected {sum(sizes)} parameters, got {vec.size}")
        pos = 0
        for p in self.parameters():
            p[...] = vec[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    # -- forward / backward -------------------------------------------------

    def forward(self, x, A=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dims[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.dims[0]}")
        if self.propagate and A is None:
            raise ValueError("graph layers need an adjacency")
        cache = []
        h = x
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            inp = A @ h if self.propagate else h
            z = inp @ W
            if self.bias:
                z = z + b
            last = k == len(self.weights) - 1
            act = self.out_activation if last else "relu"
            out = np.maximum(z, 0.0) if act == "relu" else z
            cache.append((inp, z, act))
            h = out
        return h, cache

    def backward(self, grad_out, cache, A=None):
        """Return (parameter gradients in ``parameters()`` order, input gradient)."""
        g = np.asarray(grad_out, dtype=np.float64)
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            inp, z, act = cache[k]
            if act == "relu":
                g = g * (z > 0)
            W = self.weights[k]
            inp2 = inp.reshape(-1, inp.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            gW[k] = inp2.T @ g2
            gb[k] = g2.sum(axis=0)
            g = g @ W.T
            if self.propagate:
                g = np.swapaxes(A, -1, -2) @ g
        if self.bias:
            grads = [x for pair in zip(gW, gb) for x in pair]
        else:
            grads = gW
        return grads, g


def gcn_forward(F0, A_norm, gcn: ValueNet):
    """Node embeddings after the graph-convolution stack; returns (H, cache)."""
    F0 = np.asarray(F0, dtype=np.float64)
    if A_norm.shape[-1] != F0.shape[-2]:
        raise ValueError("adjacency and feature matrix disagree on node count")
    return gcn.forward(F0, A_norm)


def global_max_pool(H):
    """Columnwise max over nodes; returns (pooled, argmax indices)."""
    H = np.asarray(H)
    if H.shape[-2] == 0:
        raise ValueError("cannot pool an empty node set")
    idx = np.argmax(H, axis=-2)
    return np.max(H, axis=-2), idx


def max_pool_backward(grad_pooled, idx, n: int):
    grad_pooled = np.asarray(grad_pooled)
    if grad_pooled.ndim == 1:
        out = np.zeros((n, grad_pooled.shape[0]))
        out[idx, np.arange(grad_pooled.shape[0])] = grad_pooled
        return out
    B, d = grad_pooled.shape
    out = np.zeros((B, n, d))
    bi = np.repeat(np.arange(B), d)
    ci = np.tile(np.arange(d), B)
    out[bi, idx.ravel(), ci] = grad_pooled.ravel()
    return out


def mlp_forward(x, net: ValueNet):
    """Scalar output of an MLP head (shape ``()`` or ``(B,)``)."""
    out, _ = net.forward(x)
    if net.dims[-1] != 1:
        raise ValueError("Q-heads end in a single unit")
    return out[..., 0]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.steps = 0

    def step(self, grads) -> None:
        for g in grads:
            if not np.all(np.isfinite(g)):
                log.error("non-finite gradient; update skipped")
                raise NonFiniteGradient("non-finite gradient")
        self.steps += 1
        if self.lr == 0:
            return
        c1 = 1 - self.beta1 ** self.steps
        c2 = 1 - self.beta2 ** self.steps
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> list[np.ndarray]:
        return self.m + self.v


def target_sync(online: ValueNet, target: ValueNet) -> None:
    target.load_from(online)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with a seeded sampler."""

    def __init__(self, capacity: int, seed=None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.items: list = []
        self.head = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.items)

    def add(self, item) -> None:
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.head] = item
        self.head = (self.head + 1) % self.capacity

    def ordered(self) -> list:
        """Contents from oldest to newest."""
        if len(self.items) < self.capacity:
            return list(self.items)
        return self.items[self.head:] + self.items[:self.head]

    def sample(self, batch_size: int) -> list:
        if not self.items:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(len(self.items), size=batch_size)
        return [self.items[i] for i in idx]


# -- checkpoints -------------------------------------------------------------


@dataclass
class Checkpoint:
    nets: dict[str, ValueNet]
    meta: dict


def save_checkpoint(path, nets: dict[str, ValueNet], meta: dict | None = None) -> Path:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian float64)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blobs = []
    manifest = {"nets": [], "meta": meta or {}}
    offset = 0
    for name, net in nets.items():
        flat = net.flat()
        manifest["nets"].append({
            "name": name,
            "dims": net.dims,
            "out_activation": net.out_activation,
            "bias": net.bias,
            "propagate": net.propagate,
            "layer_specs": net.layer_specs,
            "seed": net.seed,
            "offset": offset,
            "length": int(flat.size),
        })
        offset += flat.size
        blobs.append(flat)
    manifest["total_length"] = int(offset)
    data = np.concatenate(blobs) if blobs else np.zeros(0)
    path.with_suffix(".bin").write_bytes(data.astype("<f8").tobytes())
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    if data.size != manifest["total_length"]:
        raise ValueError(
            f"{path}: parameter blob holds {data.size} values, manifest says {manifest['total_length']}"
        )
    nets = {}
    for spec in manifest["nets"]:
        net = ValueNet(spec["dims"], spec["out_activation"], spec["bias"], spec["propagate"], seed=0)
        net.seed = spec["seed"]
        net.set_flat(data[spec["offset"]:spec["offset"] + spec["length"]])
        nets[spec["name"]] = net
    return Checkpoint(nets=nets, meta=manifest["meta"])
