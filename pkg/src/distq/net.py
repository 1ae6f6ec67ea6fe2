"""Small fully-connected networks with hand-written backprop and Adam.

Inputs are handled row-wise: ``x`` of shape ``(n, input_dim)`` (a 1-D
vector is treated as a single row). Parameter gradients from ``backward``
are summed over rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericDomainError
from .model import rng_stream

ACTIVATIONS = ("relu", "sigmoid", "tanh", "softmax", "identity")
CHECKPOINT_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    @property
    def shape(self):
        return self.weight.shape


@dataclass
class Mlp:
    layers: list[Layer]
    seed: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("an Mlp needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[0],):
                raise ConfigurationError(f"layer {i}: bias does not match weight rows")
            if i and layer.weight.shape[1] != self.layers[i - 1].weight.shape[0]:
                raise ConfigurationError(f"layer {i}: input dim does not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]

    @property
    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    @property
    def head(self) -> str:
        return self.layers[-1].activation

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def with_params(self, params) -> "Mlp":
        layers = [
            Layer(params[2 * i].copy(), params[2 * i + 1].copy(), layer.activation)
            for i, layer in enumerate(self.layers)
        ]
        return Mlp(layers, self.seed)

    def copy(self) -> "Mlp":
        return self.with_params(self.params())

    def __call__(self, x):
        return forward(self, x)


def init_mlp(layer_sizes, activations, seed: int) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    layer_sizes = [int(s) for s in layer_sizes]
    activations = list(activations)
    if len(activations) != len(layer_sizes) - 1:
        raise ConfigurationError("need one activation per layer (len(layer_sizes) - 1)")
    if any(s < 1 for s in layer_sizes):
        raise ConfigurationError("layer sizes must be positive")
    rng = rng_stream(seed, "init-mlp")
    layers = []
    for fan_in, fan_out, act in zip(layer_sizes[:-1], layer_sizes[1:], activations):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(rng.uniform(-s, s, size=(fan_out, fan_in)), np.zeros(fan_out), act))
    return Mlp(layers, seed)


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    return z


def _activation_vjp(name, z, a, g):
    """Vector-Jacobian product of the activation at pre-activation z (output a)."""
    if name == "relu":
        return g * (z > 0)
    if name == "sigmoid":
        return g * a * (1.0 - a)
    if name == "tanh":
        return g * (1.0 - a * a)
    if name == "softmax":
        return a * (g - np.sum(g * a, axis=1, keepdims=True))
    return g


def _as_rows(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ConfigurationError(f"input has shape {x.shape}, net expects (*, {net.input_dim})")
    if not np.all(np.isfinite(x)):
        raise NumericDomainError("non-finite network input")
    return x, single


def forward_cached(net: Mlp, x):
    """Forward pass returning (output rows, cache for :func:`backward`)."""
    a, _ = _as_rows(net, x)
    cache = [(a, None, None)]
    for layer in net.layers:
        z = a @ layer.weight.T + layer.bias
        a = _activate(layer.activation, z)
        cache.append((a, z, layer.activation))
    return a, cache


def forward(net: Mlp, x) -> np.ndarray:
    out, _ = forward_cached(net, x)
    if np.asarray(x).ndim == 1:
        return out[0]
    return out


def backward(net: Mlp, x, upstream, cache=None):
    """Gradients of ``sum(upstream * forward(net, x))``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is ordered
    like :meth:`Mlp.params` and ``input_grad`` has the shape of ``x``.
    """
    single = np.asarray(x).ndim == 1
    if cache is None:
        _, cache = forward_cached(net, x)
    g = np.asarray(upstream, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != cache[-1][0].shape:
        raise ConfigurationError(f"upstream shape {g.shape} != output shape {cache[-1][0].shape}")
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        a, z, act = cache[i + 1]
        a_prev = cache[i][0]
        gz = _activation_vjp(act, z, a, g)
        grads[2 * i] = gz.T @ a_prev
        grads[2 * i + 1] = gz.sum(axis=0)
        g = gz @ net.layers[i].weight
    return grads, (g[0] if single else g)


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_state(params, learning_rate: float = 1e-3) -> OptimizerState:
    return OptimizerState(
        learning_rate=learning_rate,
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
    )


def adam_step(state: OptimizerState, params, grads):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    The input state is left untouched; a step with non-finite gradients is
    rejected with :class:`NumericDomainError`.
    """
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ConfigurationError("parameter / gradient shapes differ")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericDomainError("non-finite gradient; step rejected")
    if not state.first_moment:
        state = adam_state(params, state.learning_rate)
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m = [b1 * mi + (1 - b1) * g for mi, g in zip(state.first_moment, grads)]
    v = [b2 * vi + (1 - b2) * g * g for vi, g in zip(state.second_moment, grads)]
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new = [
        p - state.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + state.epsilon)
        for p, mi, vi in zip(params, m, v)
    ]
    return new, OptimizerState(state.learning_rate, b1, b2, state.epsilon, t, m, v)


# checkpoints -----------------------------------------------------------------


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "layer_sizes": net.layer_sizes,
        "activations": net.activations,
        "weights": [layer.weight.ravel(order="C").tolist() for layer in net.layers],
        "biases": [layer.bias.tolist() for layer in net.layers],
        "seed": net.seed,
    }


def mlp_from_dict(d: dict) -> Mlp:
    if d.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {d.get('format_version')!r}")
    sizes = d["layer_sizes"]
    layers = []
    for i, act in enumerate(d["activations"]):
        w = np.array(d["weights"][i], dtype=float).reshape(sizes[i + 1], sizes[i])
        b = np.array(d["biases"][i], dtype=float)
        layers.append(Layer(w, b, act))
    return Mlp(layers, d.get("seed"))


def save_mlp(net: Mlp, path, header: dict | None = None) -> None:
    """Write a JSON checkpoint. Python's float repr round-trips exactly."""
    doc = dict(header or {})
    doc["network"] = mlp_to_dict(net)
    Path(path).write_text(json.dumps(doc, indent=1))


def load_mlp(path) -> tuple[Mlp, dict]:
    doc = json.loads(Path(path).read_text())
    net = mlp_from_dict(doc.pop("network"))
    return net, doc
