"""Sequential two-stage training of the quantizer controller(s) and the FC estimator.

Stage 1 minimises the batch estimate of the MSE lower bound over the
controller parameters. Stage 2 freezes the controllers and minimises the
batch estimate of the achieved MSE over the estimator parameters.

Both batch losses share one shape: for each support point ``s`` of the
fused statistic, ``a[t, s] = p(s | gamma_t)`` where ``gamma_t`` is the
noisy quantization probability of sample ``t``. The quantizer loss is

    sum_t theta_t^2 - sum_s (sum_t theta_t a[t,s])^2 / sum_t a[t,s]

and the FC loss is ``sum_t sum_s a[t,s] (theta_t - F(s / K))^2``.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import (
    binomial_support,
    compositions,
    law_for_spec,
    law_log_weights,
    law_score,
    mse_lower_bound,
    parallel_support,
    population_mse,
)
from .errors import ConfigurationError, ContractViolation, DeadControllerWarning, TrainingDiverged
from .model import DatasetD1, DatasetD2, NoiseModel, PriorModel, rng_stream
from .net import Mlp, adam_state, adam_step, backward, forward, forward_cached, save_mlp
from .quantizer import QuantizerSpec, gamma_empirical, gamma_grid, grid_weights, save_quantizer

LOG_WEIGHT_CUTOFF = -60.0
REGIMES = ("d1-empirical", "d2-grid")


@dataclass
class TrainingConfig:
    K_train: int
    batch_size: int = 500
    epochs: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    regime: str = "d1-empirical"
    gamma_floor: float = 1e-9
    checkpoint_every: int | None = None
    checkpoint_dir: str | None = None
    trace_path: str | None = None

    def __post_init__(self):
        if self.K_train < 1:
            raise ConfigurationError("K_train must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if self.regime not in REGIMES:
            raise ConfigurationError(f"unknown regime {self.regime!r}")
        if not 0 <= self.gamma_floor < 0.5:
            raise ConfigurationError("gamma_floor must lie in [0, 0.5)")


@dataclass
class TrainingResult:
    model: object
    epoch_losses: list = field(default_factory=list)
    batch_rows: list = field(default_factory=list)  # (epoch, batch, loss, wall_time)


def support_counts(scheme: str, K: int, dim: int) -> np.ndarray:
    if scheme == "binary":
        return binomial_support(K)
    if scheme == "parallel":
        return parallel_support(K, dim)
    return compositions(K, dim)


def _weights(scheme, counts, K, gammas):
    lw = law_log_weights(scheme, counts, K, gammas)
    return np.where(lw < LOG_WEIGHT_CUTOFF, 0.0, np.exp(lw)), lw


def quantizer_loss(thetas, gammas, K: int, scheme: str = "binary", counts=None):
    """Batch quantizer loss and its gradient with respect to every gamma.

    ``gammas`` is (B,) for binary, (B, M) for parallel, (B, L) for one-hot.
    The gradient has the same shape.
    """
    thetas = np.asarray(thetas, dtype=float)
    g = np.asarray(gammas, dtype=float)
    flat = g.ndim == 1
    g2 = g[:, None] if flat else g
    if thetas.shape[0] != g2.shape[0]:
        raise ContractViolation("thetas and gammas differ in length")
    if counts is None:
        counts = support_counts(scheme, K, g2.shape[1])
    lw = law_log_weights(scheme, counts, K, g2)  # (B, S)
    keep = lw >= LOG_WEIGHT_CUTOFF
    # rescale each column by its max so tiny weights do not underflow in the ratio
    top = np.max(np.where(keep, lw, -np.inf), axis=0)
    live = np.isfinite(top)
    top = np.where(live, top, 0.0)
    scaled = np.where(keep, np.exp(lw - top[None, :]), 0.0)
    num = thetas @ scaled
    den = scaled.sum(axis=0)
    ratio = np.zeros_like(num)
    ratio[live] = num[live] / den[live]
    explained = np.sum(np.exp(top[live]) * num[live] * ratio[live])
    loss = float(thetas @ thetas - explained)

    a = np.where(keep, np.exp(lw), 0.0)
    coeff = a * (2.0 * thetas[:, None] * ratio[None, :] - ratio[None, :] ** 2)  # (B, S)
    score = law_score(scheme, counts, K, g2)  # (B, S, d)
    grad = -np.einsum("ts,tsd->td", coeff, score)
    return loss, (grad[:, 0] if flat else grad)


def fc_loss(thetas, gammas, fc_net: Mlp, K: int, scheme: str = "binary", counts=None):
    """Batch FC loss and gradients with respect to the estimator parameters."""
    thetas = np.asarray(thetas, dtype=float)
    g = np.asarray(gammas, dtype=float)
    g2 = g[:, None] if g.ndim == 1 else g
    if counts is None:
        counts = support_counts(scheme, K, g2.shape[1])
    stats = counts / K
    if fc_net.input_dim != stats.shape[1]:
        raise ConfigurationError(f"estimator input dim {fc_net.input_dim} != statistic dim {stats.shape[1]}")
    a, _ = _weights(scheme, counts, K, g2)  # (B, S)
    out, cache = forward_cached(fc_net, stats)
    F = out[:, 0]
    resid = thetas[:, None] - F[None, :]
    loss = float(np.sum(a * resid**2))
    dF = -2.0 * np.sum(a * resid, axis=0)
    grads, _ = backward(fc_net, stats, dF[:, None], cache=cache)
    return loss, grads


# gamma sources -------------------------------------------------------------------


def _spec_dims(spec: QuantizerSpec):
    return [c.output_dim for c in spec.controllers]


def _controllers_forward(spec, x):
    outs, caches = [], []
    for c in spec.controllers:
        o, cache = forward_cached(c, x[:, None])
        outs.append(o)
        caches.append(cache)
    return np.concatenate(outs, axis=1), caches


def _controllers_backward(spec, x, caches, upstream):
    grads, col = [], 0
    for c, cache in zip(spec.controllers, caches):
        width = c.output_dim
        g, _ = backward(c, x[:, None], upstream[:, col : col + width], cache=cache)
        grads.append(g)
        col += width
    return grads


class EmpiricalGammaSource:
    """gamma_t as the sample mean of controller outputs over the raw observations."""

    def __init__(self, data: DatasetD1):
        self.data = data

    def thetas(self):
        return self.data.thetas

    def forward(self, spec, idx):
        obs = self.data.observations[idx]
        x = obs.ravel()
        out, caches = _controllers_forward(spec, x)
        B, m = obs.shape
        gam = out.reshape(B, m, -1).mean(axis=1)
        return gam, (x, caches, m)

    def backward(self, spec, ctx, dgamma):
        x, caches, m = ctx
        up = np.repeat(dgamma / m, m, axis=0)
        return _controllers_backward(spec, x, caches, up)

    def frozen(self, spec):
        g = gamma_empirical(spec, self.data.observations)
        return g[:, None] if g.ndim == 1 else g


class GridGammaSource:
    """gamma_t as the grid sum of controller outputs under normalised noise weights."""

    def __init__(self, data: DatasetD2):
        self.data = data

    def thetas(self):
        return self.data.thetas

    def forward(self, spec, idx):
        w = grid_weights(self.data.grid, self.data.noise, self.data.thetas[idx])
        x = self.data.grid.nodes
        out, caches = _controllers_forward(spec, x)
        return w @ out, (x, caches, w)

    def backward(self, spec, ctx, dgamma):
        x, caches, w = ctx
        return _controllers_backward(spec, x, caches, w.T @ dgamma)

    def frozen(self, spec):
        g = gamma_grid(spec, self.data.grid, self.data.noise, self.data.thetas)
        return g[:, None] if g.ndim == 1 else g


def gamma_source(config: TrainingConfig, data):
    if config.regime == "d1-empirical":
        if not isinstance(data, DatasetD1):
            raise ContractViolation("d1-empirical regime needs a DatasetD1")
        return EmpiricalGammaSource(data)
    if not isinstance(data, DatasetD2):
        raise ContractViolation("d2-grid regime needs a DatasetD2")
    return GridGammaSource(data)


def _clamp(gam, floor):
    clipped = np.clip(gam, floor, 1.0 - floor)
    return clipped, (gam >= floor) & (gam <= 1.0 - floor)


def _batches(n, B, seed, epoch):
    order = rng_stream(seed, "shuffle", epoch).permutation(n)
    for b in range(n // B):
        yield b, order[b * B : (b + 1) * B]


def _write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "batch", "loss", "wall_time"])
        for r in rows:
            w.writerow([r[0], r[1], repr(r[2]), f"{r[3]:.6f}"])


def train_quantizer(config: TrainingConfig, data, spec: QuantizerSpec) -> TrainingResult:
    """Stage 1: fit the controller network(s) against the batch bound loss."""
    if not all(isinstance(c, Mlp) for c in spec.controllers):
        raise ConfigurationError("only network controllers can be trained")
    source = gamma_source(config, data)
    thetas = source.thetas()
    n = thetas.shape[0]
    B = config.batch_size
    if n < B:
        raise ContractViolation(f"dataset of {n} samples is smaller than one batch of {B}")
    spec = QuantizerSpec(spec.scheme, [c.copy() for c in spec.controllers], spec.bits)
    counts = support_counts(spec.scheme, config.K_train, sum(_spec_dims(spec)))
    states = [adam_state(c.params(), config.learning_rate) for c in spec.controllers]
    result = TrainingResult(spec)
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        losses = []
        for b, idx in _batches(n, B, config.seed, epoch):
            gam, ctx = source.forward(spec, idx)
            if not np.all(np.isfinite(gam)):
                raise TrainingDiverged(
                    f"non-finite gamma at epoch {epoch}, batch {b}",
                    snapshot={"epoch": epoch, "batch": b, "gammas": gam, "spec": spec},
                )
            gam_c, inside = _clamp(gam, config.gamma_floor)
            if not inside.any():
                warnings.warn("every gamma in the batch sits at the clamp boundary", DeadControllerWarning)
            loss, dgam = quantizer_loss(thetas[idx], gam_c, config.K_train, spec.scheme, counts)
            if not np.isfinite(loss) or not np.all(np.isfinite(dgam)):
                raise TrainingDiverged(
                    f"non-finite quantizer loss at epoch {epoch}, batch {b}",
                    snapshot={"epoch": epoch, "batch": b, "gammas": gam, "spec": spec},
                )
            grads = source.backward(spec, ctx, dgam * inside)
            new = []
            for j, (c, g) in enumerate(zip(spec.controllers, grads)):
                params, states[j] = adam_step(states[j], c.params(), g)
                new.append(c.with_params(params))
            spec = QuantizerSpec(spec.scheme, new, spec.bits)
            losses.append(loss / B)
            result.batch_rows.append((epoch, b, loss / B, time.perf_counter() - t0))
        result.epoch_losses.append(float(np.mean(losses)))
        _maybe_checkpoint(config, epoch, lambda p: save_quantizer(spec, p, stage="quantizer", epoch=epoch))
    result.model = spec
    if config.trace_path:
        _write_trace(config.trace_path, result.batch_rows)
    return result


def train_fc(config: TrainingConfig, data, frozen_spec: QuantizerSpec, fc_net: Mlp) -> TrainingResult:
    """Stage 2: fit the estimator with the quantizer frozen."""
    source = gamma_source(config, data)
    thetas = source.thetas()
    n = thetas.shape[0]
    B = config.batch_size
    if n < B:
        raise ContractViolation(f"dataset of {n} samples is smaller than one batch of {B}")
    gam_all, _ = _clamp(source.frozen(frozen_spec), config.gamma_floor)
    counts = support_counts(frozen_spec.scheme, config.K_train, gam_all.shape[1])
    net = fc_net.copy()
    state = adam_state(net.params(), config.learning_rate)
    result = TrainingResult(net)
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        losses = []
        for b, idx in _batches(n, B, config.seed, epoch):
            loss, grads = fc_loss(thetas[idx], gam_all[idx], net, config.K_train, frozen_spec.scheme, counts)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite FC loss at epoch {epoch}, batch {b}",
                    snapshot={"epoch": epoch, "batch": b, "net": net},
                )
            params, state = adam_step(state, net.params(), grads)
            net = net.with_params(params)
            losses.append(loss / B)
            result.batch_rows.append((epoch, b, loss / B, time.perf_counter() - t0))
        result.epoch_losses.append(float(np.mean(losses)))
        _maybe_checkpoint(config, epoch, lambda p: save_mlp(net, p, {"kind": "estimator", "scheme": frozen_spec.scheme, "epoch": epoch}))
    result.model = net
    if config.trace_path:
        _write_trace(config.trace_path, result.batch_rows)
    return result


def _maybe_checkpoint(config, epoch, writer):
    if config.checkpoint_every and config.checkpoint_dir and (epoch + 1) % config.checkpoint_every == 0:
        d = Path(config.checkpoint_dir)
        d.mkdir(parents=True, exist_ok=True)
        writer(d / f"epoch{epoch + 1:05d}.json")


# exact evaluation ---------------------------------------------------------------


def exact_bound(spec: QuantizerSpec, noise: NoiseModel, K: int, prior: PriorModel | None = None) -> float:
    """MSE lower bound of a quantizer, evaluated on the prior quadrature."""
    return mse_lower_bound(law_for_spec(spec, noise, K), prior or PriorModel())


def exact_mse(spec: QuantizerSpec, fc, noise: NoiseModel, K: int, prior: PriorModel | None = None) -> float:
    """Population MSE of a quantizer / estimator pair."""
    from .fusion import estimate_batch

    law = law_for_spec(spec, noise, K)
    return population_mse(law, estimate_batch(fc, law.support), prior or PriorModel())
