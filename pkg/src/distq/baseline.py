"""Sine quantization with maximum-likelihood fusion (SQMLF).

Sensors use the sine probability controller; the fusion center inverts
the binomial ML estimate of gamma, which is simply the fused mean.
"""

from __future__ import annotations

import numpy as np
from scipy.special import xlog1py, xlogy

from .errors import ContractViolation
from .model import NoiseModel, PriorModel, observe, rng_stream, sample_prior
from .quantizer import QuantizerSpec, quantize


def g_sine(x):
    """[1 + sin(pi x / 2)] / 2 with x clamped to [-1, 1]."""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    out = 0.5 * (1.0 + np.sin(0.5 * np.pi * x))
    return float(out) if out.ndim == 0 else out


def g_sine_prime(x):
    x = np.asarray(x, dtype=float)
    return 0.25 * np.pi * np.cos(0.5 * np.pi * x)


def g_sine_second(x):
    x = np.asarray(x, dtype=float)
    return -0.125 * np.pi**2 * np.sin(0.5 * np.pi * x)


def sine_spec() -> QuantizerSpec:
    return QuantizerSpec("binary", [g_sine])


def sqmlf_estimate(ubar):
    """(2/pi) arcsin(2 ubar - 1); accepts scalars or arrays of fused means."""
    u = np.asarray(ubar, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ContractViolation("fused mean must lie in [0, 1]")
    out = (2.0 / np.pi) * np.arcsin(np.clip(2.0 * u - 1.0, -1.0, 1.0))
    return float(out) if out.ndim == 0 else out


def sqmlf_estimator(stats):
    """Estimator callable over (n, 1) fused statistics."""
    return sqmlf_estimate(np.asarray(stats, dtype=float).reshape(-1))


def grid_ml_estimate(ubar: float, K: int, n_grid: int = 201) -> float:
    """Brute-force ML over a theta grid for the noiseless sine quantizer."""
    theta = np.linspace(-1.0, 1.0, n_grid)
    g = g_sine(theta)
    k = round(ubar * K)
    with np.errstate(divide="ignore"):
        loglik = xlogy(k, g) + xlog1py(K - k, -g)
    return float(theta[np.argmax(loglik)])


def sqmlf_reference_mse(
    K: int,
    noise: NoiseModel,
    n_trials: int,
    seed: int,
    prior: PriorModel | None = None,
    chunk: int = 20000,
) -> tuple[float, float]:
    """Monte-Carlo MSE (and its standard error) of the SQMLF pipeline."""
    if n_trials < 1000:
        raise ContractViolation("n_trials must be >= 1000")
    prior = prior or PriorModel()
    spec = sine_spec()
    thetas = sample_prior(prior, n_trials, seed)
    errs = np.empty(n_trials)
    for c, lo in enumerate(range(0, n_trials, chunk)):
        th = thetas[lo : lo + chunk]
        x = observe(noise, th, K, seed, purpose=f"sqmlf-observe-{c}")
        bits = quantize(spec, x, rng_stream(seed, "sqmlf-dither", c))
        errs[lo : lo + chunk] = (th - sqmlf_estimate(bits.mean(axis=1))) ** 2
    return float(errs.mean()), float(errs.std(ddof=1) / np.sqrt(n_trials))
