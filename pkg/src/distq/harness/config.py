"""Experiment configuration: a versioned JSON document, strictly validated.

Unknown keys anywhere in the document are rejected so a typo cannot
silently fall back to a default in a long sweep.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigurationError
from ..model import PriorModel, noise_for_snr
from ..training import REGIMES, TrainingConfig

SCHEMA_VERSION = 1
METHODS = ("proposed", "sqmlf", "pcrlb", "bound")


@dataclass
class PriorSection:
    kind: str = "uniform"
    low: float = -1.0
    high: float = 1.0


@dataclass
class DataSection:
    regime: str = "d1-empirical"
    T: int = 10000
    M_obs: int = 1
    W: float = 2.5
    M_grid: int = 100


@dataclass
class StageSection:
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 1e-3
    gamma_floor: float = 1e-9
    checkpoint_every: int | None = None


@dataclass
class SweepSection:
    K_eval: list = field(default_factory=lambda: [10, 50, 100, 250])
    K_S: list = field(default_factory=lambda: [50])
    snr_db: list = field(default_factory=lambda: [None])
    K_F: list = field(default_factory=lambda: [100])


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    name: str = "experiment"
    scheme: str = "binary"
    bits: int = 1
    methods: list = field(default_factory=lambda: ["proposed", "sqmlf", "pcrlb"])
    prior: PriorSection = field(default_factory=PriorSection)
    data: DataSection = field(default_factory=DataSection)
    controller_hidden: list = field(default_factory=lambda: [20, 20, 20])
    estimator_hidden: list = field(default_factory=lambda: [30, 30, 30])
    quantizer_training: StageSection = field(default_factory=StageSection)
    fc_training: StageSection = field(default_factory=StageSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    n_test_trials: int = 10000
    seed: int = 0
    output_dir: str = "runs/experiment"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigurationError(f"schema_version {self.schema_version} unsupported (expected {SCHEMA_VERSION})")
        if self.scheme not in ("binary", "parallel", "onehot"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "binary" and self.bits != 1:
            raise ConfigurationError("binary scheme uses bits = 1")
        if self.bits < 1:
            raise ConfigurationError("bits must be >= 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigurationError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}")
        if self.scheme != "binary" and "sqmlf" in self.methods:
            raise ConfigurationError("the sqmlf baseline is binary only")
        if self.data.regime not in REGIMES:
            raise ConfigurationError(f"unknown regime {self.data.regime!r}")
        for axis in ("K_eval", "K_S", "snr_db", "K_F"):
            values = getattr(self.sweep, axis)
            if not isinstance(values, list) or not values:
                raise ConfigurationError(f"sweep.{axis} must be a nonempty list")
        for k in self.sweep.K_eval + self.sweep.K_S + self.sweep.K_F:
            if not isinstance(k, int) or k < 1:
                raise ConfigurationError(f"sensor counts must be positive integers, got {k!r}")
        if self.n_test_trials < 2:
            raise ConfigurationError("n_test_trials must be >= 2")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        PriorModel(self.prior.kind, self.prior.low, self.prior.high)

    # derived objects

    @property
    def prior_model(self) -> PriorModel:
        return PriorModel(self.prior.kind, self.prior.low, self.prior.high)

    def noise(self, snr_db):
        return noise_for_snr(snr_db, self.prior_model, self.data.W)

    def stage_config(self, stage: str, K_train: int, seed: int) -> TrainingConfig:
        sec = self.quantizer_training if stage == "quantizer" else self.fc_training
        return TrainingConfig(
            K_train=K_train,
            batch_size=sec.batch_size,
            epochs=sec.epochs,
            learning_rate=sec.learning_rate,
            seed=seed,
            regime=self.data.regime,
            gamma_floor=sec.gamma_floor,
            checkpoint_every=sec.checkpoint_every,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Hash of everything that changes results (not output_dir / workers)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, default=_json_default).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _json_default(o):
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    raise TypeError(o)


_SECTIONS = {
    "prior": PriorSection,
    "data": DataSection,
    "quantizer_training": StageSection,
    "fc_training": StageSection,
    "sweep": SweepSection,
}


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        if cls is ExperimentConfig and k in _SECTIONS:
            v = _build(_SECTIONS[k], v, f"{where}.{k}")
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    if "schema_version" not in raw:
        raise ConfigurationError("config lacks schema_version")
    return _build(ExperimentConfig, raw, "config")


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(raw)
