"""Fusion-center side: mean fusion, one-hot re-encoding and estimators.

The fusion center only ever sees the fused statistic, never per-sensor
messages, so one estimator serves any number of sensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bounds import moment_sums
from .errors import ConfigurationError, ContractViolation
from .model import PriorModel
from .net import Mlp, forward
from .quantizer import QuantizedMessage, symbol_to_bits

VARIANTS = {"binary": "scalar-mean", "parallel": "vector-mean", "onehot": "onehot-mean"}


@dataclass(frozen=True)
class FusedStatistic:
    variant: str
    K: int
    counts: tuple

    @property
    def value(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.K

    @property
    def dim(self) -> int:
        return len(self.counts)


def onehot_encode(message: QuantizedMessage, M: int) -> np.ndarray:
    """Indicator vector of length 2**M at the message's symbol."""
    sym = message.symbol if isinstance(message, QuantizedMessage) else int(message)
    if not 0 <= sym < 2**M:
        raise ContractViolation(f"symbol {sym} outside [0, {2**M - 1}]")
    v = np.zeros(2**M, dtype=np.int64)
    v[sym] = 1
    return v


def mean_fuse(messages, scheme: str) -> FusedStatistic:
    """Average bits, bit vectors or one-hot vectors across sensors."""
    if scheme not in VARIANTS:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    messages = list(messages)
    if not messages:
        raise ContractViolation("need at least one message")
    M = messages[0].M
    if any(m.M != M for m in messages):
        raise ContractViolation("messages mix different bit widths")
    if scheme == "binary" and M != 1:
        raise ContractViolation("binary scheme carries one bit per message")
    if scheme == "onehot":
        counts = np.sum([onehot_encode(m, M) for m in messages], axis=0)
    else:
        counts = np.sum([m.bits for m in messages], axis=0)
    return FusedStatistic(VARIANTS[scheme], len(messages), tuple(int(c) for c in np.atleast_1d(counts)))


def fuse_symbols(symbols, scheme: str, M: int) -> np.ndarray:
    """Vectorised mean fusion: symbols (n, K) -> counts (n, d)."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if scheme == "binary":
        return symbols.sum(axis=1, keepdims=True)
    if scheme == "parallel":
        return symbol_to_bits(symbols, M).sum(axis=1)
    L = 2**M
    n = symbols.shape[0]
    counts = np.zeros((n, L), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(n), symbols.shape[1]), symbols.ravel()), 1)
    return counts


class _Constant:
    def __init__(self, value):
        self.value = float(value)

    def __call__(self, stats):
        return np.full(np.asarray(stats).shape[0], self.value)


def constant_estimator(value: float = 0.0):
    return _Constant(value)


def estimate_batch(fc, stats) -> np.ndarray:
    """Apply an estimator to fused statistics of shape (n, d)."""
    stats = np.asarray(stats, dtype=float)
    if stats.ndim == 1:
        stats = stats[:, None]
    if isinstance(fc, Mlp):
        if fc.input_dim != stats.shape[1]:
            raise ConfigurationError(f"estimator expects dimension {fc.input_dim}, statistic has {stats.shape[1]}")
        return forward(fc, stats)[:, 0]
    return np.asarray(fc(stats), dtype=float).reshape(-1)


def estimate(fc_net, stat) -> float:
    value = stat.value if isinstance(stat, FusedStatistic) else np.atleast_1d(np.asarray(stat, dtype=float))
    return float(estimate_batch(fc_net, value[None, :])[0])


@dataclass
class PosteriorMeanTable:
    """E[theta | s] for every support point s of a law, usable as an estimator."""

    counts: np.ndarray
    K: int
    values: np.ndarray
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {tuple(c): i for i, c in enumerate(self.counts.tolist())}

    def lookup_counts(self, counts) -> np.ndarray:
        counts = np.atleast_2d(np.asarray(counts, dtype=np.int64))
        return np.array([self.values[self._index[tuple(c)]] for c in counts.tolist()])

    def __call__(self, stats) -> np.ndarray:
        stats = np.asarray(stats, dtype=float)
        if stats.ndim == 1:
            stats = stats[:, None]
        return self.lookup_counts(np.rint(stats * self.K).astype(np.int64))

    def as_dict(self) -> dict:
        return {tuple(c): float(v) for c, v in zip(self.counts.tolist(), self.values)}


def posterior_mean(law, prior: PriorModel) -> PosteriorMeanTable:
    """E[theta | s] per support point; zero-marginal points map to the prior mean.

    Works for fused-statistic laws and for enumerated message-matrix laws
    (where the table is indexed by message number).
    """
    num, den, _ = moment_sums(law, prior)
    vals = np.full(len(law), prior.mean)
    pos = den > 0
    vals[pos] = num[pos] / den[pos]
    counts = law.counts if hasattr(law, "counts") else np.arange(len(law))[:, None]
    return PosteriorMeanTable(np.asarray(counts), getattr(law, "K", 1), vals)


def message_counts(message_law, scheme: str, M: int) -> np.ndarray:
    """Fused counts of every enumerated message matrix in a message law."""
    msgs = message_law.messages
    if scheme == "onehot":
        return fuse_symbols(msgs[:, :, 0], "onehot", M)
    return msgs.sum(axis=1)
