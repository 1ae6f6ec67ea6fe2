"""Monte-Carlo evaluation of a quantizer / fusion-center pair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..fusion import estimate_batch, fuse_symbols
from ..model import NoiseModel, PriorModel, observe, rng_stream, sample_prior
from ..net import Mlp
from ..quantizer import QuantizerSpec, quantize


@dataclass(frozen=True)
class Scenario:
    prior: PriorModel
    noise: NoiseModel


@dataclass(frozen=True)
class McResult:
    mse: float
    stderr: float
    n_trials: int

    def __iter__(self):
        return iter((self.mse, self.stderr))


def run_monte_carlo(
    scenario: Scenario,
    quantizer: QuantizerSpec,
    fc,
    K_eval: int,
    n_trials: int,
    seed: int,
    chunk: int | None = None,
) -> McResult:
    """Empirical MSE of the full sensor -> fusion -> estimate pipeline.

    ``fc`` is an estimator network or any callable on fused statistics of
    shape ``(n, d)``.
    """
    if isinstance(fc, Mlp) and fc.input_dim != quantizer.stat_dim:
        raise ConfigurationError(
            f"estimator takes {fc.input_dim} inputs, {quantizer.scheme} statistic has {quantizer.stat_dim}"
        )
    if K_eval < 1 or n_trials < 2:
        raise ConfigurationError("need K_eval >= 1 and n_trials >= 2")
    chunk = chunk or max(1, 200_000 // K_eval)
    thetas = sample_prior(scenario.prior, n_trials, seed)
    errs = np.empty(n_trials)
    for c, lo in enumerate(range(0, n_trials, chunk)):
        th = thetas[lo : lo + chunk]
        x = observe(scenario.noise, th, K_eval, seed, purpose=f"mc-observe-{c}")
        sym = quantize(quantizer, x, rng_stream(seed, "mc-dither", c))
        stats = fuse_symbols(sym, quantizer.scheme, quantizer.bits) / K_eval
        errs[lo : lo + chunk] = (th - estimate_batch(fc, stats)) ** 2
    return McResult(float(errs.mean()), float(errs.std(ddof=1) / np.sqrt(n_trials)), n_trials)
