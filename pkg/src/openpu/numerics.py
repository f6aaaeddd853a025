"""Small fully-connected spectral network with hand-written reverse-mode gradients.

The network has a shared feature extractor (affine + LeakyReLU blocks), a
C-way softmax head ``q`` for known-class classification and ``H`` sigmoid
heads ``f`` for unknown rejection (``H = C`` for the multi-PU head, ``H = 1``
for the single-head ablation).  Batches are row-major ``(n, d_in)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PROB_EPS = 1e-7
LEAKY_SLOPE = 0.01


class ShapeError(ValueError):
    pass


class InputError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def sigmoid(z):
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Network:
    """Parameters of one network; ``params`` maps names to float64 arrays.

    Names are ``W0, b0, W1, b1, ...`` for the extractor, ``Wq, bq`` for the
    known-class head and ``Wf, bf`` for the PU heads (one column per head).
    """

    d_in: int
    n_classes: int
    hidden: tuple[int, ...] = (64, 64)
    n_pu_heads: int | None = None
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_pu_heads is None:
            self.n_pu_heads = self.n_classes
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.params:
            self.params = {k: np.zeros(s) for k, s in self.shapes().items()}
        for k, s in self.shapes().items():
            if self.params[k].shape != s:
                raise ShapeError(f"parameter {k} has shape {self.params[k].shape}, expected {s}")

    @property
    def feature_width(self) -> int:
        return self.hidden[-1] if self.hidden else self.d_in

    @property
    def n_layers(self) -> int:
        return len(self.hidden)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        dims = (self.d_in, *self.hidden)
        shapes = {}
        for i in range(len(self.hidden)):
            shapes[f"W{i}"] = (dims[i], dims[i + 1])
            shapes[f"b{i}"] = (dims[i + 1],)
        shapes["Wq"] = (self.feature_width, self.n_classes)
        shapes["bq"] = (self.n_classes,)
        shapes["Wf"] = (self.feature_width, self.n_pu_heads)
        shapes["bf"] = (self.n_pu_heads,)
        return shapes

    def copy(self) -> "Network":
        return Network(self.d_in, self.n_classes, self.hidden, self.n_pu_heads,
                       {k: v.copy() for k, v in self.params.items()})


def init_network(d_in, n_classes, hidden=(64, 64), n_pu_heads=None, seed=0) -> Network:
    """He-style uniform fan-in initialisation, biases at zero."""
    rng = np.random.default_rng(seed)
    net = Network(d_in, n_classes, hidden, n_pu_heads)
    for name, shape in net.shapes().items():
        if name.startswith("W"):
            bound = math.sqrt(6.0 / shape[0])
            net.params[name] = rng.uniform(-bound, bound, size=shape)
    return net


@dataclass
class ActivationCache:
    inputs: list[np.ndarray]     # input to each extractor layer
    pre: list[np.ndarray]        # pre-activations of each extractor layer
    features: np.ndarray
    q_probs: np.ndarray
    pu_probs: np.ndarray


def forward(net: Network, batch) -> tuple[np.ndarray, np.ndarray, ActivationCache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.d_in:
        raise ShapeError(f"batch shape {x.shape} incompatible with d_in={net.d_in}")
    if not np.all(np.isfinite(x)):
        raise InputError("batch contains non-finite values")
    p = net.params
    inputs, pre = [], []
    h = x
    for i in range(net.n_layers):
        inputs.append(h)
        z = h @ p[f"W{i}"] + p[f"b{i}"]
        pre.append(z)
        h = np.where(z > 0, z, LEAKY_SLOPE * z)
    q = clamp_prob(softmax(h @ p["Wq"] + p["bq"]))
    f = clamp_prob(sigmoid(h @ p["Wf"] + p["bf"]))
    return q, f, ActivationCache(inputs, pre, h, q, f)


def backward(net: Network, cache: ActivationCache | None, dL_dq, dL_dpu) -> dict[str, np.ndarray]:
    """Chain upstream probability gradients back to every parameter.

    Output clamping is treated as the identity here; the clamp only binds in
    saturated regimes where the exact gradient is negligible anyway.
    """
    if cache is None:
        raise RuntimeError("backward called without a forward cache")
    q, f = cache.q_probs, cache.pu_probs
    dL_dq = np.asarray(dL_dq, dtype=np.float64)
    dL_dpu = np.asarray(dL_dpu, dtype=np.float64)
    if dL_dq.shape != q.shape or dL_dpu.shape != f.shape:
        raise ShapeError("upstream gradient shapes do not match forward outputs")
    p = net.params
    dzq = q * (dL_dq - (q * dL_dq).sum(axis=1, keepdims=True))
    dzf = dL_dpu * f * (1.0 - f)
    h = cache.features
    grads = {
        "Wq": h.T @ dzq, "bq": dzq.sum(axis=0),
        "Wf": h.T @ dzf, "bf": dzf.sum(axis=0),
    }
    dh = dzq @ p["Wq"].T + dzf @ p["Wf"].T
    for i in reversed(range(net.n_layers)):
        z = cache.pre[i]
        dz = dh * np.where(z > 0, 1.0, LEAKY_SLOPE)
        grads[f"W{i}"] = cache.inputs[i].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ p[f"W{i}"].T
    return grads


def add_grads(a: dict, b: dict) -> dict:
    return {k: a[k] + b[k] for k in a}


class SGD:
    """Momentum SGD with the L2 term folded into the gradient.

    ``v <- momentum * v + (g + weight_decay * w)``; ``w <- w - lr * v``.
    Velocity buffers live on the optimizer and persist across steps.
    """

    def __init__(self, momentum=0.9, weight_decay=1e-4):
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, net: Network, grads: dict, lr: float) -> Network:
        sgd_step(net, grads, lr, self.momentum, self.weight_decay, self.velocity)
        return net


def sgd_step(net: Network, grads: dict, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0, velocity: dict | None = None) -> Network:
    if lr < 0:
        raise ValueError("lr must be non-negative")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
    if velocity is None:
        velocity = {}
    for name, g in grads.items():
        w = net.params[name]
        d = g + weight_decay * w if weight_decay else g
        if momentum:
            v = velocity.get(name)
            v = d.copy() if v is None else momentum * v + d
            velocity[name] = v
            d = v
        w -= lr * d
    return net


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0
