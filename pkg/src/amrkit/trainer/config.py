"""Optimisation settings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError


@dataclass
class TrainConfig:
    """AdamW with a constant learning rate, early stopping on validation loss.

    ``augment`` turns on random I/Q sign flips of training batches
    (see :mod:`amrkit.trainer.augment`).
    """

    lr: float = 5e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    split_ratio: tuple[float, float, float] = (0.7, 0.2, 0.1)
    patience: int = 10
    eval_batch_size: int = 256
    augment: bool = False

    def __post_init__(self):
        self.split_ratio = tuple(float(r) for r in self.split_ratio)
        if len(self.split_ratio) != 3 or min(self.split_ratio) <= 0:
            raise ConfigError(f"split_ratio must be three positive numbers, got {self.split_ratio}")
        if abs(sum(self.split_ratio) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratio must sum to 1, got {sum(self.split_ratio)!r}")
        if self.lr <= 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ConfigError("lr and eps must be positive and weight_decay non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch_size, epochs, patience and eval_batch_size must be positive")

    @property
    def betas(self) -> tuple[float, float]:
        return self.beta1, self.beta2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratio"] = list(self.split_ratio)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**data)
