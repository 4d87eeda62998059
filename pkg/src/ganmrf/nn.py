"""Dense MLPs with hand-written backprop and an Adam optimizer.

Inputs may be a single vector or a batch of row vectors. For a batch,
``backward`` sums per-example gradients, so a loss that averages over the
batch yields the averaged per-example gradient. There are no batch-coupled
layers, so this is identical to running each example separately.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ganmrf.core import ConfigError, DataError, NumericError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear")
_versions = itertools.count()


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "sigmoid":
        return _sigmoid(a)
    if name == "tanh":
        return np.tanh(a)
    if name == "linear":
        return a
    raise ConfigError(f"unknown activation {name!r}")


def activate_grad(name: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation ``a`` (``h`` is its output)."""
    if name == "relu":
        return (a > 0).astype(a.dtype)
    if name == "sigmoid":
        return h * (1.0 - h)
    if name == "tanh":
        return 1.0 - h * h
    if name == "linear":
        return np.ones_like(a)
    raise ConfigError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Mlp:
    layers: list[DenseLayer]
    hidden_activation: str = "relu"
    output_activation: str = "linear"
    version: int = field(default_factory=lambda: next(_versions), compare=False)

    def __post_init__(self):
        for name in (self.hidden_activation, self.output_activation):
            if name not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {name!r}")
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ConfigError(f"layer {k} outputs {a.out_dim} values but layer {k + 1} expects {b.in_dim}")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in checkpoint order: W0, b0, W1, b1, ..."""
        return [p for layer in self.layers for p in (layer.weights, layer.bias)]

    def touch(self):
        """Mark parameters as changed so caches from earlier forwards are rejected."""
        self.version = next(_versions)

    def copy(self) -> "Mlp":
        layers = [DenseLayer(l.weights.copy(), l.bias.copy()) for l in self.layers]
        return Mlp(layers, self.hidden_activation, self.output_activation)


@dataclass
class Cache:
    owner: int
    version: int
    single: bool
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activations
    post: list[np.ndarray]  # activations


def init_mlp(dims, head: str = "linear", seed: int = 0, hidden: str = "relu") -> Mlp:
    """He-initialized MLP (weights ~ N(0, 2/in_dim), zero biases)."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ConfigError(f"need at least two positive layer widths, got {dims}")
    rng = np.random.default_rng(seed)
    layers = [
        DenseLayer(rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in), np.zeros(n_out))
        for n_in, n_out in zip(dims[:-1], dims[1:])
    ]
    return Mlp(layers, hidden, head)


def forward(mlp: Mlp, x) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    cache = Cache(id(mlp), mlp.version, single, [], [], [])
    last = len(mlp.layers) - 1
    for k, layer in enumerate(mlp.layers):
        if h.shape[-1] != layer.in_dim:
            raise DataError(f"layer {k} expects {layer.in_dim} inputs, got {h.shape[-1]}")
        a = h @ layer.weights.T + layer.bias
        cache.inputs.append(h)
        h = activate(mlp.output_activation if k == last else mlp.hidden_activation, a)
        cache.pre.append(a)
        cache.post.append(h)
    return (h[0] if single else h), cache


def backward(mlp: Mlp, cache: Cache, grad_output) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode gradients; returns ([dW0, db0, dW1, db1, ...], d_input)."""
    if cache.owner != id(mlp) or cache.version != mlp.version or len(cache.pre) != len(mlp.layers):
        raise DataError("cache does not belong to the current parameters of this network")
    g = np.asarray(grad_output, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if g.shape != cache.post[-1].shape:
        raise DataError(f"grad_output shape {g.shape} does not match output shape {cache.post[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(mlp.layers))
    last = len(mlp.layers) - 1
    for k in range(last, -1, -1):
        name = mlp.output_activation if k == last else mlp.hidden_activation
        g = g * activate_grad(name, cache.pre[k], cache.post[k])
        grads[2 * k] = g.T @ cache.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ mlp.layers[k].weights
    return grads, (g[0] if cache.single else g)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DataError("params, grads and optimizer moments must align")
    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[k].shape:
            raise DataError(f"shape mismatch at parameter {k}: {p.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {k}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state
