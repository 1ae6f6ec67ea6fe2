"""Dithered probabilistic quantizers and their noisy quantization probabilities.

Three schemes share one container, :class:`QuantizerSpec`:

* ``binary``   one sigmoid-headed controller, one bit per sensor;
* ``parallel`` M independent binary quantizers, one controller per bit;
* ``onehot``   one softmax-headed controller over 2**M symbols.

Bit vectors map to symbols MSB-first: bits ``[1, 0]`` are symbol 2.

A controller is either an :class:`~distq.net.Mlp` or any callable mapping a
1-D array of observations to an array of probabilities (shape ``(n,)`` for
binary/parallel controllers, ``(n, 2**M)`` for one-hot).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    ContractViolation,
    DegenerateSupportError,
    QuadratureWarning,
)
from .model import NoiseModel, ObservationGrid, rng_stream
from .net import Mlp, forward, mlp_from_dict, mlp_to_dict

SCHEMES = ("binary", "parallel", "onehot")
GH_NODES = 65
_LOG_TINY = float(np.log(np.finfo(float).tiny))


def evaluate_controller(controller, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if isinstance(controller, Mlp):
        out = forward(controller, x[:, None])
        return out[:, 0] if controller.output_dim == 1 else out
    return np.asarray(controller(x), dtype=float)


@dataclass
class QuantizerSpec:
    scheme: str
    controllers: list
    bits: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not isinstance(self.controllers, (list, tuple)):
            self.controllers = [self.controllers]
        self.controllers = list(self.controllers)
        if self.scheme == "binary":
            self.bits = 1
        expected = self.bits if self.scheme == "parallel" else 1
        if len(self.controllers) != expected:
            raise ConfigurationError(
                f"{self.scheme} scheme with M={self.bits} needs {expected} controller(s), "
                f"got {len(self.controllers)}"
            )
        for c in self.controllers:
            if isinstance(c, Mlp):
                want_dim = self.n_symbols if self.scheme == "onehot" else 1
                want_head = "softmax" if self.scheme == "onehot" else "sigmoid"
                if c.input_dim != 1 or c.output_dim != want_dim or c.head != want_head:
                    raise ConfigurationError(
                        f"{self.scheme} controller must map 1 -> {want_dim} with a {want_head} head"
                    )

    @property
    def n_symbols(self) -> int:
        return 2**self.bits

    @property
    def stat_dim(self) -> int:
        """Input dimension of a fusion-center network for this scheme."""
        return {"binary": 1, "parallel": self.bits, "onehot": self.n_symbols}[self.scheme]

    def probabilities(self, x) -> np.ndarray:
        """Controller outputs: (n,) binary, (n, M) parallel, (n, 2**M) one-hot."""
        x = np.asarray(x, dtype=float).ravel()
        if self.scheme == "binary":
            return evaluate_controller(self.controllers[0], x).reshape(x.shape[0])
        if self.scheme == "parallel":
            return np.stack([evaluate_controller(c, x).reshape(x.shape[0]) for c in self.controllers], axis=1)
        return evaluate_controller(self.controllers[0], x).reshape(x.shape[0], self.n_symbols)

    def symbol_probabilities(self, x) -> np.ndarray:
        """p(u = m | X = x) for every symbol m, shape (n, 2**M)."""
        p = self.probabilities(x)
        if self.scheme == "binary":
            return np.stack([1.0 - p, p], axis=1)
        if self.scheme == "parallel":
            return bit_products(p)
        return p


@dataclass(frozen=True)
class QuantizedMessage:
    bits: tuple
    symbol: int

    @classmethod
    def from_symbol(cls, symbol: int, M: int) -> "QuantizedMessage":
        return cls(tuple(int(b) for b in symbol_to_bits(symbol, M)), int(symbol))

    @classmethod
    def from_bits(cls, bits) -> "QuantizedMessage":
        bits = tuple(int(b) for b in bits)
        return cls(bits, int(bits_to_symbol(bits)))

    @property
    def M(self) -> int:
        return len(self.bits)


@lru_cache(maxsize=32)
def _bit_table(M: int) -> np.ndarray:
    """(2**M, M) table of MSB-first bits of each symbol."""
    sym = np.arange(2**M)[:, None]
    shifts = np.arange(M - 1, -1, -1)[None, :]
    table = (sym >> shifts) & 1
    table.flags.writeable = False
    return table


def symbol_to_bits(symbol, M: int) -> np.ndarray:
    symbol = np.asarray(symbol)
    if np.any(symbol < 0) or np.any(symbol >= 2**M):
        raise ContractViolation(f"symbol outside [0, {2**M - 1}]")
    return _bit_table(M)[symbol]


def bits_to_symbol(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    M = bits.shape[-1]
    weights = 1 << np.arange(M - 1, -1, -1)
    return bits @ weights


def bit_products(bit_probs) -> np.ndarray:
    """Symbol law induced by independent bits: (n, M) -> (n, 2**M)."""
    bit_probs = np.asarray(bit_probs, dtype=float)
    M = bit_probs.shape[-1]
    table = _bit_table(M)  # (L, M)
    p = bit_probs[..., None, :]
    return np.prod(np.where(table == 1, p, 1.0 - p), axis=-1)


def embed_parallel_in_onehot(spec: QuantizerSpec) -> QuantizerSpec:
    """One-hot spec whose symbol law equals the parallel spec's, exactly."""
    if spec.scheme != "parallel":
        raise ConfigurationError("embedding needs a parallel spec")

    def controller(x, _spec=spec):
        return bit_products(_spec.probabilities(x))

    return QuantizerSpec("onehot", [controller], spec.bits)


# quantization ------------------------------------------------------------------


def quantize_binary(g_of_x: float, z: float) -> int:
    if not 0.0 <= g_of_x <= 1.0 or not 0.0 <= z < 1.0:
        raise ContractViolation(f"need g in [0,1] and z in [0,1), got g={g_of_x}, z={z}")
    return int(g_of_x > z)


def quantize_parallel(spec: QuantizerSpec, x: float, seed: int, index: int = 0) -> QuantizedMessage:
    if spec.scheme != "parallel":
        raise ContractViolation("quantize_parallel needs a parallel spec")
    p = spec.probabilities([x])[0]
    z = rng_stream(seed, "dither-parallel", index).random(spec.bits)
    return QuantizedMessage.from_bits((p > z).astype(int))


def quantize_onehot(spec: QuantizerSpec, x: float, z: float) -> QuantizedMessage:
    if spec.scheme != "onehot":
        raise ContractViolation("quantize_onehot needs a onehot spec")
    if not 0.0 <= z < 1.0:
        raise ContractViolation(f"dither must lie in [0,1), got {z}")
    p = spec.probabilities([x])[0]
    return QuantizedMessage.from_symbol(int(_cumulative_pick(p[None, :], np.array([z]))[0]), spec.bits)


def _cumulative_pick(p, z):
    """Symbol m with z in [sum_{j<m} p_j, sum_{j<=m} p_j)."""
    cum = np.cumsum(p, axis=1)
    sym = np.sum(cum <= z[:, None], axis=1)
    return np.minimum(sym, p.shape[1] - 1)


def quantize(spec: QuantizerSpec, x, rng: np.random.Generator) -> np.ndarray:
    """Vectorised quantization of an array of observations; returns symbols."""
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    p = spec.probabilities(flat)
    if spec.scheme == "binary":
        sym = (p > rng.random(flat.shape[0])).astype(np.int64)
    elif spec.scheme == "parallel":
        bits = (p > rng.random(p.shape)).astype(np.int64)
        sym = bits_to_symbol(bits)
    else:
        sym = _cumulative_pick(p, rng.random(flat.shape[0]))
    return sym.reshape(x.shape)


# noisy quantization probability ------------------------------------------------


@lru_cache(maxsize=8)
def _hermgauss(n: int):
    t, w = np.polynomial.hermite.hermgauss(n)
    return t, w / np.sqrt(np.pi)


def _gh_expectation(spec, sigma, theta, n):
    t, w = _hermgauss(n)
    x = theta[:, None] + np.sqrt(2.0) * sigma * t[None, :]
    p = spec.probabilities(x.ravel())
    p = p.reshape(theta.shape[0], n, *p.shape[1:])
    return np.tensordot(w, p, axes=([0], [1]))


def gamma_exact(spec: QuantizerSpec, noise: NoiseModel, theta, nodes: int = GH_NODES, check: bool = False):
    """E[G(X) | theta] for scalar or array ``theta``.

    Gaussian noise uses Gauss-Hermite quadrature. With ``check=True`` the
    rule is repeated with twice the nodes and a :class:`QuadratureWarning`
    is issued when the two disagree by more than 1e-8.
    """
    scalar = np.ndim(theta) == 0
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if noise.is_noiseless:
        out = spec.probabilities(th)
    else:
        out = _gh_expectation(spec, noise.sigma, th, nodes)
        if check:
            fine = _gh_expectation(spec, noise.sigma, th, 2 * nodes)
            diff = float(np.max(np.abs(fine - out)))
            if diff > 1e-8:
                warnings.warn(f"Gauss-Hermite refinement changed gamma by {diff:.3g}", QuadratureWarning)
    return out[0] if scalar else out


def gamma_empirical(controller, observations) -> np.ndarray:
    """Sample mean of controller outputs over the observation axis (last axis)."""
    obs = np.asarray(observations, dtype=float)
    if obs.size == 0 or obs.shape[-1] == 0:
        raise ContractViolation("need at least one observation")
    lead = obs.shape[:-1]
    p = (
        controller.probabilities(obs.ravel())
        if isinstance(controller, QuantizerSpec)
        else evaluate_controller(controller, obs.ravel())
    )
    p = p.reshape(*lead, obs.shape[-1], *p.shape[1:])
    return p.mean(axis=len(lead))


def grid_weights(grid: ObservationGrid, noise: NoiseModel, theta) -> np.ndarray:
    """Normalised weights w(x | theta) over the grid nodes, shape (n_theta, n_nodes).

    The noiseless limit puts all mass on the nearest node.
    """
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if not np.all(np.isfinite(th)):
        raise DegenerateSupportError("non-finite theta")
    nodes = grid.nodes
    if noise.is_noiseless:
        w = np.zeros((th.shape[0], nodes.shape[0]))
        w[np.arange(th.shape[0]), np.argmin(np.abs(th[:, None] - nodes[None, :]), axis=1)] = 1.0
        return w
    logf = noise.log_density(nodes[None, :], th[:, None])
    top = logf.max(axis=1, keepdims=True)
    # weights are normalised in log space, but a theta whose density
    # underflows on every node is far outside the grid: refuse it
    if not np.all(top > _LOG_TINY):
        bad = th[~(top[:, 0] > _LOG_TINY)][0]
        raise DegenerateSupportError(f"noise density underflows on every grid node at theta={bad!r}")
    w = np.exp(logf - top)
    return w / w.sum(axis=1, keepdims=True)


def gamma_grid(controller, grid: ObservationGrid, noise: NoiseModel, theta):
    """Grid approximation of E[G(X) | theta] with normalised density weights."""
    scalar = np.ndim(theta) == 0
    w = grid_weights(grid, noise, theta)
    g = (
        controller.probabilities(grid.nodes)
        if isinstance(controller, QuantizerSpec)
        else evaluate_controller(controller, grid.nodes)
    )
    out = np.tensordot(w, g, axes=([1], [0]))
    return out[0] if scalar else out


# checkpoints -----------------------------------------------------------------


def save_quantizer(spec: QuantizerSpec, path, **extra) -> None:
    if not all(isinstance(c, Mlp) for c in spec.controllers):
        raise ConfigurationError("only network controllers can be checkpointed")
    doc = {"kind": "quantizer", "scheme": spec.scheme, "bits": spec.bits, **extra}
    doc["controllers"] = [mlp_to_dict(c) for c in spec.controllers]
    Path(path).write_text(json.dumps(doc, indent=1))


def load_quantizer(path) -> tuple[QuantizerSpec, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "quantizer":
        raise ConfigurationError(f"{path} is not a quantizer checkpoint")
    nets = [mlp_from_dict(d) for d in doc.pop("controllers")]
    return QuantizerSpec(doc["scheme"], nets, doc["bits"]), doc


__all__ = [
    "QuantizerSpec",
    "QuantizedMessage",
    "quantize_binary",
    "quantize_parallel",
    "quantize_onehot",
    "quantize",
    "gamma_exact",
    "gamma_empirical",
    "gamma_grid",
    "grid_weights",
    "embed_parallel_in_onehot",
    "bit_products",
    "symbol_to_bits",
    "bits_to_symbol",
    "save_quantizer",
    "load_quantizer",
]
