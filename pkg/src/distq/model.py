"""Priors, observation noise, SNR bookkeeping and training-data synthesis.

Random draws go through :func:`rng_stream`, which keys an independent
generator by ``(seed, purpose, index...)``. Two call sites that use
different purposes never share a stream, so adding a sampling step in one
place does not shift the draws anywhere else.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from .errors import ConfigurationError, ContractViolation

QUADRATURE_NODES = 2001


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def rng_stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent generator for one (purpose, index) cell of a seed."""
    key = (_purpose_key(purpose),) + tuple(int(i) for i in index)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


@lru_cache(maxsize=16)
def _legendre(n: int):
    x, w = roots_legendre(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


@dataclass(frozen=True)
class PriorModel:
    """Prior over the desired parameter.

    Only ``kind="uniform"`` is supported. The quadrature grid is a
    Gauss-Legendre rule mapped onto ``[low, high]`` with weights normalised
    to sum to one, so ``sum(w * f(nodes))`` is ``E[f(theta)]``.
    """

    kind: str = "uniform"
    low: float = -1.0
    high: float = 1.0
    n_nodes: int = QUADRATURE_NODES

    def __post_init__(self):
        if self.kind != "uniform":
            raise ConfigurationError(f"unsupported prior kind {self.kind!r}")
        if not (np.isfinite(self.low) and np.isfinite(self.high)) or self.high < self.low:
            raise ConfigurationError(f"bad prior interval [{self.low}, {self.high}]")
        if self.n_nodes < 1:
            raise ConfigurationError("n_nodes must be >= 1")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def second_moment(self) -> float:
        a, b = self.low, self.high
        return (a * a + a * b + b * b) / 3.0

    @property
    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """(nodes, weights) with weights summing to 1."""
        if self.high == self.low:
            return np.array([self.low]), np.array([1.0])
        x, w = _legendre(self.n_nodes)
        half = 0.5 * (self.high - self.low)
        nodes = self.mean + half * x
        weights = w / w.sum()
        return nodes, weights

    @property
    def quadrature_grid(self) -> list[tuple[float, float]]:
        nodes, weights = self.quadrature
        return list(zip(nodes.tolist(), weights.tolist()))


@dataclass(frozen=True)
class NoiseModel:
    """Additive observation noise, ``X = theta + N(0, sigma^2)``.

    ``observation_bound`` is the half-width ``W`` of the artificial
    observation grid used when only the noise law is known.
    """

    kind: str = "gaussian-additive"
    sigma: float = 0.0
    observation_bound: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian-additive", "noiseless"):
            raise ConfigurationError(f"unsupported noise kind {self.kind!r}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ConfigurationError(f"sigma must be finite and >= 0, got {self.sigma}")
        if (self.sigma == 0) != (self.kind == "noiseless"):
            raise ConfigurationError("sigma = 0 exactly when kind = 'noiseless'")
        if not self.observation_bound > 0:
            raise ConfigurationError("observation_bound must be > 0")

    @classmethod
    def gaussian(cls, sigma: float, observation_bound: float = 1.0) -> "NoiseModel":
        if sigma == 0:
            return cls("noiseless", 0.0, observation_bound)
        return cls("gaussian-additive", float(sigma), observation_bound)

    @classmethod
    def noiseless(cls, observation_bound: float = 1.0) -> "NoiseModel":
        return cls("noiseless", 0.0, observation_bound)

    @property
    def is_noiseless(self) -> bool:
        return self.kind == "noiseless"

    def log_density(self, x, theta):
        """log f_X(x | theta); broadcasts. Noiseless is a point mass (0 / -inf)."""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if self.is_noiseless:
            return np.where(x == theta, 0.0, -np.inf)
        z = (x - theta) / self.sigma
        return -0.5 * z * z - np.log(self.sigma * np.sqrt(2.0 * np.pi))

    def density(self, x, theta):
        return np.exp(self.log_density(x, theta))


def sample_prior(prior: PriorModel, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ContractViolation("n must be >= 1")
    if prior.kind != "uniform":
        raise ConfigurationError(f"unsupported prior kind {prior.kind!r}")
    rng = rng_stream(seed, "prior")
    if prior.high == prior.low:
        return np.full(n, float(prior.low))
    return rng.uniform(prior.low, prior.high, size=n)


def observe(noise: NoiseModel, theta, n: int, seed: int, purpose: str = "observe") -> np.ndarray:
    """``n`` conditionally i.i.d. observations of ``theta``.

    ``theta`` may be an array, in which case the result has shape
    ``theta.shape + (n,)`` and every entry gets its own noise draw.
    """
    if n < 1:
        raise ContractViolation("n must be >= 1")
    theta = np.asarray(theta, dtype=float)
    shape = theta.shape + (n,)
    if noise.is_noiseless:
        return np.broadcast_to(theta[..., None], shape).copy()
    rng = rng_stream(seed, purpose)
    return theta[..., None] + noise.sigma * rng.standard_normal(shape)


def snr_to_sigma(snr_db: float, prior: PriorModel) -> float:
    """Noise std. dev. for a given SNR, with SNR = E[theta^2] / sigma^2."""
    power = prior.second_moment
    if not power > 0 or not np.isfinite(power):
        raise ConfigurationError("prior second moment must be finite and positive")
    if snr_db == np.inf:
        return 0.0
    return float(np.sqrt(power / 10.0 ** (snr_db / 10.0)))


def noise_for_snr(snr_db: float | None, prior: PriorModel, observation_bound: float = 1.0) -> NoiseModel:
    """``None`` or ``inf`` gives the noiseless model."""
    if snr_db is None or snr_db == np.inf:
        return NoiseModel.noiseless(observation_bound)
    return NoiseModel.gaussian(snr_to_sigma(snr_db, prior), observation_bound)


@dataclass
class DatasetD1:
    """Parameter samples with ``M_obs`` raw observations each."""

    thetas: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.observations = np.asarray(self.observations, dtype=float)
        if self.observations.ndim != 2 or self.observations.shape[0] != self.thetas.shape[0]:
            raise ContractViolation("observations must be (T, M_obs) aligned with thetas")
        if self.observations.shape[1] < 1:
            raise ContractViolation("M_obs must be >= 1")

    def __len__(self):
        return self.thetas.shape[0]

    def __getitem__(self, t):
        return float(self.thetas[t]), self.observations[t]

    @property
    def m_obs(self) -> int:
        return self.observations.shape[1]

    @property
    def entries(self):
        return [(float(th), obs.tolist()) for th, obs in zip(self.thetas, self.observations)]


@dataclass
class DatasetD2:
    """Parameter samples only; observations are replaced by a grid and a known noise law."""

    thetas: np.ndarray
    grid: "ObservationGrid"
    noise: NoiseModel

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)

    def __len__(self):
        return self.thetas.shape[0]


@dataclass(frozen=True)
class ObservationGrid:
    nodes: np.ndarray = field(repr=False)
    W: float
    M_grid: int

    @property
    def spacing(self) -> float:
        return self.W / self.M_grid

    def __len__(self):
        return self.nodes.shape[0]


def build_dataset_d1(prior: PriorModel, noise: NoiseModel, T: int, M_obs: int, seed: int) -> DatasetD1:
    if T < 1 or M_obs < 1:
        raise ContractViolation("T and M_obs must be >= 1")
    thetas = rng_stream(seed, "d1-theta").uniform(prior.low, prior.high, size=T)
    if prior.high == prior.low:
        thetas = np.full(T, float(prior.low))
    obs = observe(noise, thetas, M_obs, seed, purpose="d1-observations")
    return DatasetD1(thetas, obs)


def build_dataset_d2(prior: PriorModel, noise: NoiseModel, T: int, grid: ObservationGrid, seed: int) -> DatasetD2:
    if T < 1:
        raise ContractViolation("T must be >= 1")
    thetas = rng_stream(seed, "d2-theta").uniform(prior.low, prior.high, size=T)
    return DatasetD2(thetas, grid, noise)


def build_obs_grid(W: float, M_grid: int) -> ObservationGrid:
    if not W > 0 or M_grid < 1:
        raise ContractViolation("need W > 0 and M_grid >= 1")
    nodes = W * np.arange(-M_grid, M_grid + 1, dtype=float) / M_grid
    return ObservationGrid(nodes, float(W), int(M_grid))
