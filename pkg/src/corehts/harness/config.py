"""Training configuration and seed derivation.

One integer seed drives everything. Independent streams are derived with
``numpy.random.SeedSequence(seed, spawn_key=(stream,))`` where ``stream`` is
one of the constants below, so the noisy-dataset draw, the weight
initialization, training-time noise and evaluation sampling never share
random numbers and can each be reproduced on their own.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..models import MODES, VARIANTS

SCHEMA_VERSION = 1

STREAM_DATA = 0
STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_EVAL = 3


def seed_stream(seed: int, stream: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(stream, *extra))


def rng_for(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_stream(seed, stream, *extra)))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "core"
    mode: str = "point"
    weight: float = 0.01
    lr: float = 1e-3
    patience: int = 100
    max_epochs: int = 5000
    lag: int = 5
    hidden: int = 128
    seed: int = 0
    accuracy: str = "mse"
    n_samples: int = 100
    dropout_rate: float = 0.1
    noise_scale: float = 1.0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init: str = "uniform_fan_in"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.variant == "profhit_style" and self.mode != "point":
            raise ConfigError("profhit_style is only defined for mode 'point'")
        if not self.weight >= 0:
            raise ConfigError("weight must be nonnegative")
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be at least 1")
        if self.lag < 1 or self.hidden < 1 or self.n_samples < 1:
            raise ConfigError("lag, hidden and n_samples must be positive")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.accuracy not in ("mse", "mae"):
            raise ConfigError("accuracy must be 'mse' or 'mae'")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be nonnegative")
        if self.init != "uniform_fan_in":
            raise ConfigError("only 'uniform_fan_in' initialization is implemented")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"config schema version {self.schema_version} is not supported")

    @property
    def effective_weight(self) -> float:
        """Weight actually applied to a coherency term (0 for base/projection)."""
        return self.weight if self.variant in ("core", "profhit_style") else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        return self.from_dict({**self.to_dict(), **changes})

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(d)
