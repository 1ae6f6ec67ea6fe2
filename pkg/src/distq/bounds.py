"""Conditional laws of the fused statistic, MSE lower bounds and Fisher information.

A :class:`ConditionalLaw` is a finite support of count vectors plus a way
to evaluate ``p(support | theta)`` on an array of parameter values. All
probabilities are assembled in log space; ``0 * log 0`` is taken as 0, so
saturated controllers (gamma exactly 0 or 1) give exact point masses.

The brute-force oracles here enumerate every message matrix directly and
share no combinatorics with the fused laws they are used to check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .errors import (
    ConfigurationError,
    EnumerationTooLarge,
    NumericalIntegrityError,
    SingularityError,
)
from .model import PriorModel

MAX_ENUMERATION = 2**20
_CHUNK = 4096


# support enumeration -----------------------------------------------------------


def binomial_support(K: int) -> np.ndarray:
    return np.arange(K + 1)[:, None]


def parallel_support(K: int, M: int) -> np.ndarray:
    """{0..K}^M in lexicographic order."""
    return np.array(list(itertools.product(range(K + 1), repeat=M)), dtype=np.int64).reshape(-1, M)


def compositions(K: int, L: int) -> np.ndarray:
    """All (i_0, ..., i_{L-1}) >= 0 summing to K, in colexicographic order."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + (remaining,))
            return
        for i in range(remaining + 1):
            rec(prefix + (i,), remaining - i, slots - 1)

    rec((), K, L)
    out.sort(key=lambda c: c[::-1])
    return np.array(out, dtype=np.int64).reshape(-1, L)


# log-space weights -------------------------------------------------------------


def law_log_weights(kind: str, counts: np.ndarray, K: int, gammas: np.ndarray) -> np.ndarray:
    """log p(counts | gamma) for each gamma row: (n, d) gammas -> (n, S).

    ``binary`` and ``parallel`` take per-bit probabilities of a one, ``onehot``
    takes the symbol probability vector.
    """
    g = np.asarray(gammas, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    c = counts.astype(float)
    if kind in ("binary", "parallel"):
        logc = gammaln(K + 1) - gammaln(c + 1) - gammaln(K - c + 1)  # (S, M)
        # (n, 1, M) against (1, S, M)
        lw = xlogy(c[None], g[:, None, :]) + xlog1py(K - c[None], -g[:, None, :])
        return np.sum(lw + logc[None], axis=2)
    if kind == "onehot":
        logc = gammaln(K + 1) - np.sum(gammaln(c + 1), axis=1)  # (S,)
        return logc[None] + np.sum(xlogy(c[None], g[:, None, :]), axis=2)
    raise ConfigurationError(f"unknown law kind {kind!r}")


def law_score(kind: str, counts: np.ndarray, K: int, gammas: np.ndarray) -> np.ndarray:
    """d log p(counts | gamma) / d gamma, shape (n, S, d).

    Callers clamp gamma away from 0 and 1 first.
    """
    g = np.asarray(gammas, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    c = counts.astype(float)[None]
    if kind in ("binary", "parallel"):
        return c / g[:, None, :] - (K - c) / (1.0 - g[:, None, :])
    return c / g[:, None, :]


@dataclass
class ConditionalLaw:
    """Law of a fused statistic given theta.

    ``gamma_fn`` maps a 1-D array of theta values to gammas of shape
    ``(n,)`` (binary), ``(n, M)`` (parallel) or ``(n, L)`` (one-hot).
    """

    kind: str
    K: int
    counts: np.ndarray
    gamma_fn: Callable = field(repr=False)

    @property
    def support(self) -> np.ndarray:
        """Statistic values (counts / K), shape (S, d)."""
        return self.counts / self.K

    def __len__(self):
        return self.counts.shape[0]

    def gammas(self, theta) -> np.ndarray:
        g = np.asarray(self.gamma_fn(np.atleast_1d(np.asarray(theta, dtype=float))), dtype=float)
        return g[:, None] if g.ndim == 1 else g

    def log_prob(self, theta) -> np.ndarray:
        """(S, n) matrix of log p(s | theta)."""
        return law_log_weights(self.kind, self.counts, self.K, self.gammas(theta)).T

    def prob(self, theta) -> np.ndarray:
        return np.exp(self.log_prob(theta))

    def prob_rows(self, theta, lo, hi, gammas=None) -> np.ndarray:
        g = self.gammas(theta) if gammas is None else gammas
        return np.exp(law_log_weights(self.kind, self.counts[lo:hi], self.K, g).T)

    def prob_fn(self, s_index: int, theta: float) -> float:
        return float(self.prob([theta])[s_index, 0])


def binomial_law(gamma_fn, K: int) -> ConditionalLaw:
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    return ConditionalLaw("binary", K, binomial_support(K), gamma_fn)


def parallel_law(gamma_fns, K: int) -> ConditionalLaw:
    """Product of independent per-bit binomials.

    ``gamma_fns`` is a sequence of per-bit callables, or a single callable
    returning an ``(n, M)`` array (then pass ``M`` implicitly via its output).
    """
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    if callable(gamma_fns):
        M = np.asarray(gamma_fns(np.zeros(1))).reshape(1, -1).shape[1]
        fn = gamma_fns
    else:
        fns = list(gamma_fns)
        M = len(fns)
        if M < 1:
            raise ConfigurationError("need at least one bit")

        def fn(theta, _fns=fns):
            return np.stack([np.asarray(f(theta), dtype=float).reshape(-1) for f in _fns], axis=1)

    return ConditionalLaw("parallel", K, parallel_support(K, M), fn)


def onehot_law(gamma_vec_fn, K: int, L: int | None = None) -> ConditionalLaw:
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    if L is None:
        L = np.asarray(gamma_vec_fn(np.zeros(1))).reshape(1, -1).shape[1]
    return ConditionalLaw("onehot", K, compositions(K, L), gamma_vec_fn)


def law_for_spec(spec, noise, K: int) -> ConditionalLaw:
    """Fused-statistic law of a quantizer under a noise model."""
    from .quantizer import gamma_exact

    def fn(theta):
        return gamma_exact(spec, noise, theta)

    if spec.scheme == "binary":
        return binomial_law(fn, K)
    if spec.scheme == "parallel":
        return parallel_law(fn, K)
    return onehot_law(fn, K, spec.n_symbols)


# bounds ------------------------------------------------------------------------


def moment_sums(law, prior: PriorModel):
    """Per support point: E[theta p(s|theta)], E[p(s|theta)]; plus E[theta^2]."""
    nodes, w = prior.quadrature
    num = np.empty(len(law))
    den = np.empty(len(law))
    extra = {"gammas": law.gammas(nodes)} if isinstance(law, ConditionalLaw) else {}
    for lo in range(0, len(law), _CHUNK):
        P = law.prob_rows(nodes, lo, lo + _CHUNK, **extra)
        num[lo : lo + P.shape[0]] = P @ (w * nodes)
        den[lo : lo + P.shape[0]] = P @ w
    return num, den, float(w @ nodes**2)


def mse_lower_bound(law, prior: PriorModel) -> float:
    """E[theta^2] - sum_s E[theta p(s|theta)]^2 / E[p(s|theta)]."""
    num, den, second = moment_sums(law, prior)
    pos = den > 0
    explained = float(np.sum(num[pos] ** 2 / den[pos]))
    bound = second - explained
    if bound < -1e-10:
        raise NumericalIntegrityError(f"negative MSE bound {bound:.3e}")
    return min(max(bound, 0.0), second)


def population_mse(law, estimates, prior: PriorModel) -> float:
    """E over theta and s of (theta - estimate(s))^2 for a fixed estimator table."""
    nodes, w = prior.quadrature
    P = law.prob(nodes)  # (S, n)
    est = np.asarray(estimates, dtype=float).reshape(-1, 1)
    return float(np.sum(P * (nodes[None, :] - est) ** 2 * w[None, :]))


# Fisher information --------------------------------------------------------------


def fisher_info(gamma_fn, theta, K: int, gamma_derivative_fn=None, step: float = 1e-6):
    """K * gamma'(theta)^2 / (gamma (1 - gamma)).

    The derivative is a central difference unless ``gamma_derivative_fn``
    is given.
    """
    scalar = np.ndim(theta) == 0
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    g = np.asarray(gamma_fn(th), dtype=float).reshape(-1)
    bad = (g <= 0) | (g >= 1)
    if np.any(bad):
        raise SingularityError(f"gamma hits 0 or 1 at theta={th[bad][0]!r}", theta=float(th[bad][0]))
    if gamma_derivative_fn is None:
        dg = (np.asarray(gamma_fn(th + step)).reshape(-1) - np.asarray(gamma_fn(th - step)).reshape(-1)) / (2 * step)
    else:
        dg = np.asarray(gamma_derivative_fn(th), dtype=float).reshape(-1)
    out = K * dg**2 / (g * (1.0 - g))
    return float(out[0]) if scalar else out


def fused_fisher_direct(gamma, dgamma, d2gamma, theta, K: int):
    """E[-d^2/dtheta^2 log p(ubar | theta)] summed term by term over k = 0..K."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    g = np.asarray(gamma(th), dtype=float).reshape(-1, 1)
    d1 = np.asarray(dgamma(th), dtype=float).reshape(-1, 1)
    d2 = np.asarray(d2gamma(th), dtype=float).reshape(-1, 1)
    k = np.arange(K + 1, dtype=float)[None, :]
    logp = gammaln(K + 1) - gammaln(k + 1) - gammaln(K - k + 1) + xlogy(k, g) + xlog1py(K - k, -g)
    curv = d2 * (k / g - (K - k) / (1 - g)) - d1**2 * (k / g**2 + (K - k) / (1 - g) ** 2)
    out = -np.sum(np.exp(logp) * curv, axis=1)
    return float(out[0]) if np.ndim(theta) == 0 else out


def product_fisher_direct(gamma, dgamma, d2gamma, theta, K: int):
    """Same curvature for the full bit vector, by enumerating all 2^K vectors."""
    if 2**K > MAX_ENUMERATION:
        raise EnumerationTooLarge(f"2^{K} message vectors", size=2**K)
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    g = np.asarray(gamma(th), dtype=float).reshape(-1)
    d1 = np.asarray(dgamma(th), dtype=float).reshape(-1)
    d2 = np.asarray(d2gamma(th), dtype=float).reshape(-1)
    total = np.zeros_like(th)
    one = d1**2 / g**2 - d2 / g
    zero = d2 / (1 - g) + d1**2 / (1 - g) ** 2
    for u in itertools.product((0, 1), repeat=K):
        ones = sum(u)
        p = g**ones * (1 - g) ** (K - ones)
        total += p * (ones * one + (K - ones) * zero)
    return float(total[0]) if np.ndim(theta) == 0 else total


def pcrlb_binary(K: int) -> float:
    """Reciprocal of the sine controller's constant Fisher information K*pi^2/4."""
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    return 4.0 / (math.pi**2 * K)


# brute-force oracles ------------------------------------------------------------


@dataclass
class MessageLaw:
    """Law of the full K-sensor message matrix, enumerated explicitly.

    ``messages`` has shape (N, K, d): bits for binary/parallel (d = 1 or M),
    symbols for one-hot (d = 1).
    """

    kind: str
    K: int
    messages: np.ndarray
    row_prob: Callable = field(repr=False)

    def __len__(self):
        return self.messages.shape[0]

    def prob_rows(self, theta, lo, hi) -> np.ndarray:
        return self.row_prob(self.messages[lo:hi], np.atleast_1d(np.asarray(theta, dtype=float)))

    def prob(self, theta) -> np.ndarray:
        return self.prob_rows(theta, 0, len(self))


def _check_size(n_messages, what):
    if n_messages > MAX_ENUMERATION:
        raise EnumerationTooLarge(f"{what}: {n_messages} message matrices exceeds {MAX_ENUMERATION}", size=n_messages)


def binary_message_law(gamma_fn, K: int) -> MessageLaw:
    _check_size(2**K, "binary")
    msgs = np.array(list(itertools.product((0, 1), repeat=K)), dtype=np.int64).reshape(-1, K, 1)

    def row_prob(m, theta):
        g = np.asarray(gamma_fn(theta), dtype=float).reshape(1, 1, -1)
        bits = m[:, :, 0][..., None]
        return np.prod(np.where(bits == 1, g, 1.0 - g), axis=1)

    return MessageLaw("binary", K, msgs, row_prob)


def parallel_message_law(gamma_fns, K: int, M: int | None = None) -> MessageLaw:
    if callable(gamma_fns):
        fn = gamma_fns
        if M is None:
            M = np.asarray(fn(np.zeros(1))).reshape(1, -1).shape[1]
    else:
        fns = list(gamma_fns)
        M = len(fns)

        def fn(theta):
            return np.stack([np.asarray(f(theta), dtype=float).reshape(-1) for f in fns], axis=1)

    _check_size(2 ** (K * M), "parallel")
    msgs = np.array(list(itertools.product((0, 1), repeat=K * M)), dtype=np.int64).reshape(-1, K, M)

    def row_prob(m, theta):
        g = np.asarray(fn(theta), dtype=float)  # (n, M)
        out = np.ones((m.shape[0], theta.shape[0]))
        for k in range(K):
            for j in range(M):
                b = m[:, k, j][:, None]
                out *= np.where(b == 1, g[None, :, j], 1.0 - g[None, :, j])
        return out

    return MessageLaw("parallel", K, msgs, row_prob)


def onehot_message_law(gamma_vec_fn, K: int, L: int | None = None) -> MessageLaw:
    if L is None:
        L = np.asarray(gamma_vec_fn(np.zeros(1))).reshape(1, -1).shape[1]
    _check_size(L**K, "onehot")
    msgs = np.array(list(itertools.product(range(L), repeat=K)), dtype=np.int64).reshape(-1, K, 1)

    def row_prob(m, theta):
        g = np.asarray(gamma_vec_fn(theta), dtype=float)  # (n, L)
        out = np.ones((m.shape[0], theta.shape[0]))
        for k in range(K):
            out *= g[:, m[:, k, 0]].T
        return out

    return MessageLaw("onehot", K, msgs, row_prob)


def brute_force_mmse(message_law: MessageLaw, prior: PriorModel) -> float:
    """Exact MMSE by summing over every message matrix."""
    _check_size(len(message_law), message_law.kind)
    nodes, w = prior.quadrature
    second = float(w @ nodes**2)
    explained = 0.0
    for lo in range(0, len(message_law), _CHUNK):
        P = message_law.prob_rows(nodes, lo, lo + _CHUNK)
        num = P @ (w * nodes)
        den = P @ w
        pos = den > 0
        explained += float(np.sum(num[pos] ** 2 / den[pos]))
    return second - explained
